import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compabs.abstraction import Grid, abstract_system
from compabs.composition import InterconnectionGraph
from compabs.deltaiss import LinearModel
from compabs.gridcompose import FastPathUnsupported, GridComposition, _prefix, box_contained
from compabs.pipeline import build_abstractions

from small_network import small_spec


# [DERIVED] prefix-sum containment against slicing the mask directly
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_box_contained_matches_slicing(seed, ndim):
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in rng.integers(1, 6, ndim))
    W = rng.random(shape) < 0.8
    wide = sorted(int(a) for a in np.flatnonzero(rng.random(ndim) < 0.6))
    m = 30
    los, his = [], []
    for ax, s in enumerate(shape):
        lo = rng.integers(0, s, m)
        hi = np.array([int(rng.integers(l, s)) for l in lo]) if ax in wide else lo.copy()
        los.append(lo)
        his.append(hi)
    got = box_contained(_prefix(W, wide), wide, los, his)
    for k in range(m):
        sl = tuple(slice(los[a][k], his[a][k] + 1) for a in range(ndim))
        assert got[k] == bool(W[sl].all())


def small_comp(**kw):
    spec = small_spec()
    abstractions, _ = build_abstractions(spec)
    return spec, abstractions, GridComposition(abstractions, spec.graph, spec.M_hat, **kw)


# [TRIVIAL] successor boxes and explicit successors agree
def test_boxes_and_successors_consistent():
    spec, _, comp = small_comp()
    for u in comp.inputs():
        los, his, valid = comp.boxes(u)
        for xs in [(0, 0, 0), (3, 4, 5), (7, 7, 7)]:
            succ = comp.successors(xs, u)
            if not valid[xs]:
                assert succ == []
                continue
            lo = [int(np.broadcast_to(l, comp.shape)[xs]) for l in los]
            hi = [int(np.broadcast_to(h, comp.shape)[xs]) for h in his]
            assert len(succ) == int(np.prod([b - a + 1 for a, b in zip(lo, hi)]))


# [DERIVED] transition count equals the sum of explicit successor counts
def test_transition_count():
    _, _, comp = small_comp()
    total = sum(len(comp.successors(xs, u)) for xs in np.ndindex(*comp.shape) for u in comp.inputs())
    assert comp.transition_count() == total


# [TRIVIAL] the memory guard refuses before allocating
def test_materialize_guard():
    _, _, comp = small_comp()
    with pytest.raises(MemoryError):
        comp.materialize(memory_limit=10)
    boxes = comp.materialize()
    assert len(boxes) == comp.n_inputs


# [TRIVIAL] multi-dimensional subsystems are outside the fast path
def test_rejects_2d():
    m = LinearModel(np.eye(2) * 0.5, np.zeros((2, 0)), np.zeros((2, 0)), [[0, 1], [0, 1]], np.zeros((1, 0)))
    a = abstract_system(m, Grid(m.state_bounds, 0.5))
    with pytest.raises(FastPathUnsupported):
        GridComposition([a], InterconnectionGraph(1, ()), (0.0,))
