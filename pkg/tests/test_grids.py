import numpy as np
import pytest

from tenerv import grids as G
from tenerv.gop import divergence
from tenerv.tensor import Tensor

from conftest import check_gradients


def make_base(values_per_level, strides, window, frames):
    grids = [Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for v in values_per_level]
    return G.BaseGridSet(tuple(strides), grids, frames + window - 1)


def test_level_length_covers_last_index():
    # 26 positions at stride 4 reach 25/4 = 6.25, so entries 0..7 are needed
    assert G.level_length(26, 4) == 8
    assert G.level_length(26, 1) == 26
    assert G.level_length(25, 4) == 7


def test_lookup_single_level_exact(rng):
    g = rng.uniform(-1, 1, (5, 2, 3, 3))
    base = make_base([g], [1], 1, 5)
    for i in range(5):
        np.testing.assert_array_equal(G.base_lookup(base, i).data, g[i])


def test_lookup_midpoint_interpolation():
    v0, v1 = np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 6.0)
    g = np.stack([v0, v1, v1])  # entries at positions 0, 2, 4
    base = make_base([g], [2], 1, 3)
    assert G.base_lookup(base, 1).data.item() == pytest.approx(4.0)
    assert G.base_lookup(base, 2).data.item() == 6.0


def test_lookup_concatenates_levels(rng):
    base = make_base([rng.normal(size=(6, 4, 2, 2)), rng.normal(size=(3, 2, 2, 2))], [1, 4], 1, 6)
    assert G.base_lookup(base, 3).shape == (6, 2, 2)


def test_lookup_out_of_range(rng):
    base = make_base([rng.normal(size=(4, 1, 1, 1))], [1], 2, 3)
    with pytest.raises(IndexError):
        G.base_lookup(base, 4)


def scalar_base(values, window):
    g = np.asarray(values, dtype=np.float64).reshape(-1, 1, 1, 1)
    return make_base([g], [1], window, len(values) - window + 1)


def test_window_l1_is_base():
    base = scalar_base([1.0, 2.0, 3.0], 1)
    w = G.WindowWeights.one_hot(3, 1, np.float64)
    assert [G.fuse_window(base, w, t).data.item() for t in range(3)] == [1.0, 2.0, 3.0]


def test_window_hand_evaluation():
    # T=3, l=2, base (1,2,3,4), weights (0.5, 0.5) -> (1.5, 2.5, 3.5)
    base = scalar_base([1.0, 2.0, 3.0, 4.0], 2)
    w = G.WindowWeights(Tensor(np.full((3, 2), 0.5)))
    got = [G.fuse_window(base, w, t).data.item() for t in range(3)]
    assert got == [1.5, 2.5, 3.5]


def test_window_selects_offset():
    base = scalar_base([10.0, 20.0, 30.0, 40.0, 50.0], 3)
    w = np.zeros((3, 3))
    w[:, 1] = 1.0
    ww = G.WindowWeights(Tensor(w))
    assert [G.fuse_window(base, ww, t).data.item() for t in range(3)] == [20.0, 30.0, 40.0]


def test_window_defined_at_last_frame_without_clamping(rng):
    T, l = 5, 3
    base = make_base([rng.normal(size=(T + l - 1, 2, 1, 1))], [1], l, T)
    w = np.zeros((T, l))
    w[:, -1] = 1.0
    out = G.fuse_window(base, G.WindowWeights(Tensor(w)), T - 1)
    np.testing.assert_array_equal(out.data, base.grids[0].data[T + l - 2])


def test_window_linearity(rng):
    T, l = 4, 3
    g = rng.normal(size=(T + l - 1, 2, 2, 2))
    w = G.WindowWeights(Tensor(rng.normal(size=(T, l))))
    a = G.fuse_window_many(make_base([g], [1], l, T), w, range(T)).data
    b = G.fuse_window_many(make_base([2.5 * g], [1], l, T), w, range(T)).data
    np.testing.assert_allclose(b, 2.5 * a, rtol=1e-12)


def test_initialization_identity(rng):
    T, l = 6, 3
    base = G.BaseGridSet.create(T, l, (3, 1), (1, 4), (2, 2), rng, np.float32)
    w = G.WindowWeights.one_hot(T, l)
    gop = G.GoPGridSet()
    for t in range(T):
        fused = G.fuse_gop(G.fuse_window(base, w, t), gop, 0)
        np.testing.assert_array_equal(fused.data, G.base_lookup(base, t).data)


def test_gop_fusion_cases(rng):
    x = Tensor(rng.normal(size=(3, 2, 2)))
    gop = G.GoPGridSet()
    np.testing.assert_array_equal(G.fuse_gop(x, gop, 0).data, x.data)
    gop.activate(2, (3, 2, 2), np.float64)
    np.testing.assert_array_equal(G.fuse_gop(x, gop, 1).data, x.data)
    gop.grids.data[1] = -x.data
    np.testing.assert_array_equal(G.fuse_gop(x, gop, 1).data, 0.0)
    with pytest.raises(IndexError):
        G.fuse_gop(x, gop, 2)


def test_flatten_embedding():
    x = Tensor(np.array([1.0, 2.0]).reshape(2, 1, 1))
    np.testing.assert_array_equal(G.flatten_embedding(x), [1.0, 2.0])
    y = np.zeros((3, 4, 5))
    assert G.flatten_embedding(y).shape == (60,)


def test_flatten_feeds_divergence_like_manual(rng):
    T, l = 5, 2
    base = G.BaseGridSet.create(T, l, (2, 1), (1, 2), (2, 3), rng, np.float64)
    w = G.WindowWeights(Tensor(rng.normal(size=(T, l))))
    flat = [G.flatten_embedding(G.fuse_window(base, w, t)) for t in range(T)]
    manual = [G.fuse_window(base, w, t).data.ravel(order="C") for t in range(T)]
    np.testing.assert_array_equal(divergence(flat), divergence(manual))
    tg = G.TemporalGrids(base, w)
    np.testing.assert_array_equal(tg.temporal_embeddings(), np.stack(manual))


def test_fused_gradients(rng):
    T, l = 4, 3
    ts = [0, 2, 3, 3]
    ks = [0, 1, 1, 1]

    def build(g0, g1, w, gop):
        base = G.BaseGridSet((1, 2), [g0, g1], T + l - 1)
        x = G.fuse_window_many(base, G.WindowWeights(w), ts)
        return G.fuse_gop_many(x, G.GoPGridSet(gop, True), ks)

    check_gradients(
        build,
        [
            rng.uniform(-1, 1, (6, 2, 2, 2)),
            rng.uniform(-1, 1, (G.level_length(6, 2), 1, 2, 2)),
            rng.uniform(-1, 1, (T, l)),
            rng.uniform(-1, 1, (2, 3, 2, 2)),
        ],
    )
