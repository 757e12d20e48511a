from compabs.config import parse_spec

SMALL = {
    "name": "small3",
    # 1 feeds itself (uncoupled), 3 feeds 1, 1 feeds 2, 2 feeds 3
    "edges_one_based": [[1, 1], [3, 1], [1, 2], [2, 3]],
    "subsystems": [
        {"A": [[0.5]], "B": [[2.0]], "D": [[0.0, 0.2]], "state_bounds": [[0, 8]], "ext_inputs": [[0], [1]],
         "eta": 1.0, "int_eta": [1.0, 0.5]},
        {"A": [[0.5]], "B": [[2.0]], "D": [[0.3]], "state_bounds": [[0, 8]], "ext_inputs": [[0], [1]],
         "eta": 1.0, "int_eta": [0.5]},
        {"A": [[0.4]], "B": [[1.5]], "D": [[0.25]], "state_bounds": [[0, 8]], "ext_inputs": [[0], [1]],
         "eta": 1.0, "int_eta": [0.5]},
    ],
    "M_hat": [0.5, 0.5, 0.5],
    "eps_targets": [2, 2, 2],
    "mu_targets": [1, 1, 1],
    "safe_set": [[1, 7], [1, 7], [1, 7]],
    "x0": [3, 3, 3],
    "horizon_steps": 50,
}


def small_spec(**over):
    return parse_spec({**SMALL, **over})
