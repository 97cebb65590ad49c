import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvhash.errors import DataError
from mvhash.fusion import (
    Fusion,
    pool_slots,
    pool_uniforms,
    prob_view_pool,
    project,
    rank_views,
    replication_fuse,
    sample_views,
    view_probabilities,
    viewcode_fuse,
)
from mvhash.nn import MLP


def _codes(rng, q, M=4):
    return [rng.uniform(-1, 1, q) for _ in range(M)]


# configuration grid: 30 points per method
GRID = list(itertools.islice(
    ((qb, qv, v, k, w) for qb, qv, v, (k, w) in itertools.product(
        (8, 16, 64), (4, 16), ((1, 4, 8, 16), (2, 3, 5, 7), (1, 1, 1, 1), (3, 6)),
        ((1, 4), (2, 4), (4, 4), (4, 8)))),
    0, None, 3))[:30]


def test_grid_has_thirty_points():
    assert len(GRID) == 30


@pytest.mark.parametrize("qb,qv,v,k,w", GRID)
def test_layout_lengths(qb, qv, v, k, w):
    rng = np.random.default_rng(qb * 1000 + qv * 10 + k)
    M = len(v)
    basic, views = rng.uniform(-1, 1, qb), _codes(rng, qv, M)
    E = rng.uniform(0, 1, M)
    r = replication_fuse(basic, views, E, v)
    assert len(r) == qb + qv * sum(v) == sum(s["length"] for s in r.layout)
    budget = qb + qv * M + 7
    c = viewcode_fuse(basic, views, E, budget=budget, seed=1)
    assert len(c) == budget == sum(s["length"] for s in c.layout)
    if (k * qv) % w == 0:
        p = prob_view_pool(views, E, k, w, seed=3)
        assert len(p) == k * qv // w
        f = Fusion("p", qb, qv, M, k=k, w=w)
        assert f.out_len == qb + k * qv // w
    else:
        with pytest.raises(DataError):
            pool_slots(qv, k, w)
    for method in "rc":
        f = Fusion(method, qb, qv, M, v, budget=budget)
        out, _ = f.forward(basic[None], [x[None] for x in views], E)
        assert out.shape == (1, f.out_len)


# ------------------------------------------------------------------ replication


def test_replication_default_geometry():
    rng = np.random.default_rng(0)
    out = replication_fuse(rng.uniform(-1, 1, 16), _codes(rng, 16), np.ones(4), (1, 4, 8, 16))
    assert len(out) == 480


def test_replication_tie_order_and_top_gets_largest():
    views = [np.full(2, float(m + 1)) for m in range(4)]
    out = replication_fuse(np.zeros(2), views, np.ones(4), (1, 4, 8, 16))
    assert [s["view"] for s in out.layout[1:]] == [0, 1, 2, 3]
    assert [s["repeats"] for s in out.layout[1:]] == [16, 8, 4, 1]
    out = replication_fuse(np.zeros(2), views, np.array([0.1, 0.2, 1.0, 0.5]), (1, 4, 8, 16))
    assert [s["view"] for s in out.layout[1:]] == [2, 3, 1, 0]
    assert (out.values[2:2 + 32] == 3.0).all()


def test_rank_views_stable():
    assert rank_views(np.array([0.5, 1.0, 0.5, 1.0])).tolist() == [1, 3, 0, 2]


def test_replication_permutation_moves_segments_only():
    rng = np.random.default_rng(4)
    basic, views, E = rng.uniform(-1, 1, 8), _codes(rng, 8), np.array([0.2, 0.9, 0.4, 1.0])
    a = replication_fuse(basic, views, E)
    sw = [views[1], views[0], views[2], views[3]]
    b = replication_fuse(basic, sw, E[[1, 0, 2, 3]])

    def segs(x):
        return sorted(tuple(x.values[s["start"]:s["start"] + s["length"]]) for s in x.layout)

    assert segs(a) == segs(b)
    np.testing.assert_array_equal(np.sort(a.values), np.sort(b.values))


def test_replication_vector_length_mismatch():
    with pytest.raises(DataError):
        replication_fuse(np.zeros(4), [np.zeros(4)] * 4, np.ones(4), (1, 2))


# ------------------------------------------------------------------- view-code


def test_viewcode_uniform_budget_200():
    rng = np.random.default_rng(1)
    out = viewcode_fuse(rng.uniform(-1, 1, 16), _codes(rng, 16), np.ones(4), budget=200, codes=np.array([.1, .2, .3, .4]))
    head, *mids, end = out.layout
    assert head["length"] == 16
    assert [m["length"] for m in mids] == [16] * 4
    assert end["length"] == 200 - 16 - 64
    np.testing.assert_array_equal(out.values[80:88], [.1, .2, .3, .4, .1, .2, .3, .4])


def test_viewcode_zero_weight_view_only_in_end():
    rng = np.random.default_rng(2)
    views = [np.full(8, 10.0 * (m + 1)) for m in range(4)]
    out = viewcode_fuse(np.zeros(8), views, np.array([1.0, 0.0, 0.5, 1.0]), budget=64, codes=np.array([.1, .2, .3, .4]))
    assert out.layout[2]["length"] == 0
    assert 20.0 not in out.values
    assert 0.2 in out.values


def test_viewcode_head_equals_replication_head():
    rng = np.random.default_rng(3)
    basic, views, E = rng.uniform(-1, 1, 16), _codes(rng, 16), rng.uniform(0, 1, 4)
    np.testing.assert_array_equal(replication_fuse(basic, views, E).values[:16], viewcode_fuse(basic, views, E).values[:16])


def test_viewcode_budget_too_small():
    with pytest.raises(DataError, match="budget too small for E"):
        viewcode_fuse(np.zeros(16), [np.zeros(16)] * 4, np.ones(4), budget=40)


def test_viewcode_scalars_seeded():
    a = Fusion("c", 8, 8, 4, seed=17).view_codes
    b = Fusion("c", 8, 8, 4, seed=17).view_codes
    np.testing.assert_array_equal(a, b)
    assert ((a >= -1) & (a <= 1)).all()


# --------------------------------------------------------------------- pooling


def test_pool_one_hot_is_max_pooled_view_one():
    rng = np.random.default_rng(5)
    views = _codes(rng, 16)
    out = prob_view_pool(views, np.array([1.0, 0, 0, 0]), k=4, w=4, seed=9)
    expanded = np.repeat(views[0], 4)
    np.testing.assert_array_equal(out.values, expanded.reshape(-1, 4).max(axis=1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.integers(0, 10**6))
def test_pool_one_hot_seed_invariant(seed, hot, image_id):
    rng = np.random.default_rng(6)
    views = _codes(rng, 8)
    E = np.zeros(4)
    E[hot] = 0.7
    a = prob_view_pool(views, E, 2, 4, seed=seed, image_id=image_id)
    b = prob_view_pool(views, E, 2, 4, seed=0, image_id=0)
    np.testing.assert_array_equal(a.values, b.values)


def test_pool_slot_count():
    assert pool_slots(16, 2, 4) == 8
    assert len(prob_view_pool(_codes(np.random.default_rng(0), 16), np.ones(4), k=2, w=4)) == 8


def test_pool_width_must_divide():
    with pytest.raises(DataError):
        prob_view_pool([np.zeros(6)] * 4, np.ones(4), k=1, w=4)


def test_pool_selection_frequencies():
    E = np.array([1.0, 0.431, 0.0, 0.683])
    u = pool_uniforms(42, np.arange(10_000), 1)[:, 0]
    freq = np.bincount(sample_views(view_probabilities(E), u), minlength=4) / 10_000
    np.testing.assert_allclose(freq, E / E.sum(), atol=0.02)


def test_pool_probabilities_uniform_when_all_zero():
    assert view_probabilities(np.zeros(4)).tolist() == [0.25] * 4


def test_pool_reproducible_per_image():
    views = _codes(np.random.default_rng(7), 16)
    E = np.array([0.3, 1.0, 0.6, 0.2])
    a = prob_view_pool(views, E, seed=5, image_id=123)
    b = prob_view_pool(views, E, seed=5, image_id=123)
    np.testing.assert_array_equal(a.values, b.values)
    f = Fusion("p", 4, 16, 4, seed=5)
    batch, _ = f.forward(np.zeros((2, 4)), [np.stack([v, v]) for v in views], E, ids=np.array([9, 123]))
    np.testing.assert_array_equal(batch[1, 4:], a.values)


# ------------------------------------------------------------------ projection


def test_project_zero_weights():
    proj = MLP([480, 64], "tanh", zero=True)
    out = project(np.ones(480), proj)
    assert out.shape == (64,) and not out.any()


def test_project_length_mismatch():
    with pytest.raises(DataError):
        project(np.ones(10), MLP([12, 4], "tanh", np.random.default_rng(0)))


@pytest.mark.parametrize("method", "rcp")
def test_output_length_q_for_every_method(method):
    rng = np.random.default_rng(8)
    f = Fusion(method, 16, 16, 4)
    proj = MLP([f.out_len, 64], "tanh", rng)
    exp, _ = f.forward(rng.uniform(-1, 1, (3, 16)), [rng.uniform(-1, 1, (3, 16)) for _ in range(4)],
                       rng.uniform(0, 1, 4), ids=np.arange(3))
    out = project(exp, proj)
    assert out.shape == (3, 64) and (np.abs(out) < 1).all()


def _fd_check(f, x, grad, h=1e-5):
    flat = x.ravel()
    worst = 0.0
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        num = (up - down) / (2 * h)
        an = grad.ravel()[i]
        worst = max(worst, abs(num - an) / max(abs(num), abs(an), 1e-8))
    return worst


@pytest.mark.parametrize("method", "rcp")
def test_fusion_and_projection_gradients(method):
    rng = np.random.default_rng({"r": 1, "c": 2, "p": 3}[method])
    for _ in range(3):
        f = Fusion(method, 4, 4, 4, fusion_vector=(1, 2, 3, 4), budget=40, k=2, w=2, seed=3)
        proj = MLP([f.out_len, 6], "tanh", rng)
        basic = rng.uniform(-0.9, 0.9, (2, 4))
        views = [rng.uniform(-0.9, 0.9, (2, 4)) for _ in range(4)]
        E = rng.uniform(0.1, 1, 4)
        ids = np.array([5, 6])
        weights = rng.normal(size=(2, 6))
        exp, idx = f.forward(basic, views, E, ids=ids)

        def objective():
            e, _ = f.forward(basic, views, E, ids=ids)
            return float((weights * proj(e)).sum())

        out, acts = proj.forward(exp, cache=True)
        p_grads, g_exp = proj.backward(acts, weights)
        g_basic, g_views = f.backward(g_exp, idx)
        assert _fd_check(objective, proj.params[0], p_grads[0]) < 1e-4
        assert _fd_check(objective, proj.params[1], p_grads[1]) < 1e-4
        # pooling argmax is piecewise; keep values distinct so the winner is stable under h
        assert _fd_check(objective, basic, g_basic) < 1e-4
        for v, g in zip(views, g_views):
            assert _fd_check(objective, v, g) < 1e-4
