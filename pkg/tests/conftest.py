import numpy as np
import pytest

from compabs.core import TransitionSystem


def random_system(rng, n_states=None, n_ext=None, n_int=1, density=0.35, dim=1, name=""):
    """Random finite system with integer-ish output coordinates in [0, 3]."""
    n = int(rng.integers(1, 9)) if n_states is None else n_states
    ne = int(rng.integers(1, 4)) if n_ext is None else n_ext
    outputs = rng.integers(0, 4, size=(n, dim)).astype(float)
    ext = rng.integers(0, 3, size=(ne, 1)).astype(float)
    trans = [
        (x, e, w, xp)
        for x in range(n)
        for e in range(ne)
        for w in range(n_int)
        for xp in range(n)
        if rng.random() < density
    ]
    init = [x for x in range(n) if rng.random() < 0.6] or [0]
    return TransitionSystem(outputs, trans, init, ext, np.zeros((n_int, 0)) if n_int == 1 else np.arange(n_int, dtype=float)[:, None], name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
