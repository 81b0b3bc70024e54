import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughlq.errors import DimensionError, NodeIndexError, ParameterError
from roughlq.rough_path import (
    GridRoughPath,
    TimeGrid,
    chen_area,
    dump_rough_path,
    holder_distance,
    lift_brownian_stratonovich,
    lift_piecewise_linear,
    load_rough_path,
)


def test_grid_invariants():
    g = TimeGrid(np.array([0.0, 0.1, 0.4, 1.0]))
    assert g.T == 1.0
    assert g.mesh == pytest.approx(0.6)
    with pytest.raises(ParameterError):
        TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ParameterError):
        TimeGrid(np.array([0.1, 0.5]))
    with pytest.raises(ParameterError):
        TimeGrid.from_mesh(1.0, 0.3)


def test_lift_linear_1d_segments():
    g = TimeGrid(np.array([0.0, 0.5, 1.0]))
    p = lift_piecewise_linear(g.times, g)
    np.testing.assert_allclose(p.level2[:, 0, 0], [0.125, 0.125])


def test_lift_linear_2d_square_corner():
    g = TimeGrid.uniform(1.0, 2)
    p = lift_piecewise_linear([[0, 0], [1, 0], [1, 1]], g)
    np.testing.assert_allclose(p.level2[0], [[0.5, 0], [0, 0]])
    np.testing.assert_allclose(p.level2[1], [[0, 0], [0, 0.5]])


def test_lift_smooth_iterated_integral():
    g = TimeGrid.uniform(1.0, 2**10)
    t = g.times
    p = lift_piecewise_linear(np.column_stack([t, t**2]), g)
    # int_0^1 r d(r^2) = 2/3
    assert chen_area(p, 0, g.n)[0, 1] == pytest.approx(2.0 / 3.0, abs=1e-3)


def test_lift_length_mismatch():
    g = TimeGrid.uniform(1.0, 4)
    with pytest.raises(DimensionError):
        lift_piecewise_linear(np.zeros(3), g)


def test_brownian_lift_1d_is_half_square():
    g = TimeGrid.uniform(1.0, 16)
    p = lift_brownian_stratonovich(3, 1, 2**-10, g)
    np.testing.assert_allclose(p.level2[:, 0, 0], 0.5 * p.increments[:, 0] ** 2, rtol=1e-12, atol=1e-15)


def test_brownian_lift_deterministic():
    g = TimeGrid.uniform(1.0, 8)
    a = lift_brownian_stratonovich(11, 2, 2**-9, g)
    b = lift_brownian_stratonovich(11, 2, 2**-9, g)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.level2.tobytes() == b.level2.tobytes()


def test_brownian_lift_parameter_errors():
    g = TimeGrid.uniform(1.0, 8)
    with pytest.raises(ParameterError):
        lift_brownian_stratonovich(0, 1, 0.0, g)
    with pytest.raises(ParameterError):
        lift_brownian_stratonovich(0, 0, 2**-8, g)


def test_ito_flag_removes_bracket():
    g = TimeGrid.uniform(1.0, 4)
    s = lift_brownian_stratonovich(5, 2, 2**-8, g)
    i = lift_brownian_stratonovich(5, 2, 2**-8, g, ito=True)
    np.testing.assert_allclose(s.level2 - i.level2, np.broadcast_to(0.125 * np.eye(2), (4, 2, 2)), atol=1e-15)


def test_brownian_statistics():
    # Var of the antisymmetric Levy area over [0, 1] is t^2 / 4; piecewise-linear bias is t^2 / (4 m)
    g = TimeGrid.uniform(1.0, 1)
    n = 100_000
    area = np.empty(n)
    inc = np.empty(n)
    for s in range(n):
        p = lift_brownian_stratonovich(s, 2, 2**-10, g)
        area[s] = 0.5 * (p.level2[0, 0, 1] - p.level2[0, 1, 0])
        inc[s] = p.increments[0, 0]
    var = area.var(ddof=1)
    se_var = np.sqrt(np.var((area - area.mean()) ** 2, ddof=1) / n)
    assert abs(var - 0.25) < 3 * se_var
    assert abs(inc.mean()) < 4 * inc.std(ddof=1) / np.sqrt(n)


def test_chen_adjacent_is_stored_level():
    g = TimeGrid.uniform(1.0, 5)
    p = lift_brownian_stratonovich(2, 2, 2**-8, g)
    np.testing.assert_array_equal(chen_area(p, 2, 3), p.level2[2])


def test_chen_polygon():
    g = TimeGrid.uniform(1.0, 2)
    p = lift_piecewise_linear([[0, 0], [1, 0], [1, 1]], g)
    a = chen_area(p, 0, 2)
    assert a[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert a[1, 0] == pytest.approx(0.0, abs=1e-15)


def test_chen_index_error():
    g = TimeGrid.uniform(1.0, 3)
    p = lift_piecewise_linear(np.zeros(4), g)
    with pytest.raises(NodeIndexError):
        chen_area(p, 2, 2)


def test_chen_random_three_nodes():
    rng = np.random.default_rng(0)
    g = TimeGrid.uniform(1.0, 2)
    p = GridRoughPath(g, rng.normal(size=(3, 3)), rng.normal(size=(2, 3, 3)))
    r = chen_area(p, 0, 2) - chen_area(p, 0, 1) - chen_area(p, 1, 2) - np.outer(p.increment(0, 1), p.increment(1, 2))
    assert np.max(np.abs(r)) < 1e-14


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    d=st.integers(1, 3),
    n=st.integers(3, 60),
)
def test_chen_and_geometricity_properties(seed, d, n):
    rng = np.random.default_rng(seed)
    g = TimeGrid(np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, n))]))
    p = lift_piecewise_linear(rng.normal(size=(n + 1, d)), g)
    i, u, j = sorted(rng.choice(n + 1, size=3, replace=False))
    lhs = chen_area(p, i, j)
    rhs = chen_area(p, i, u) + chen_area(p, u, j) + np.outer(p.increment(i, u), p.increment(u, j))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(lhs)))
    dx = p.increment(i, j)
    sym = 0.5 * (lhs + lhs.T)
    assert np.max(np.abs(sym - 0.5 * np.outer(dx, dx))) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_restrict_matches_chen():
    g = TimeGrid.uniform(1.0, 32)
    p = lift_brownian_stratonovich(8, 2, 2**-10, g)
    idx = np.array([0, 5, 6, 20, 32])
    c = p.restrict(idx)
    for k in range(len(idx) - 1):
        np.testing.assert_allclose(c.level2[k], chen_area(p, idx[k], idx[k + 1]), atol=1e-14)


def test_holder_identity_and_shift():
    g = TimeGrid.uniform(1.0, 64)
    p = lift_brownian_stratonovich(1, 2, 2**-10, g)
    r = holder_distance(p, p, 0.45)
    assert (r.first_level, r.second_level) == (0.0, 0.0)
    r = holder_distance(p, p.shifted([3.0, -1.0]), 0.45)
    # only rounding of the shifted node values remains
    assert r.first_level < 1e-12


def test_holder_grid_mismatch():
    a = lift_piecewise_linear(np.zeros(5), TimeGrid.uniform(1.0, 4))
    b = lift_piecewise_linear(np.zeros(6), TimeGrid.uniform(1.0, 5))
    with pytest.raises(DimensionError):
        holder_distance(a, b)


def test_holder_distance_matches_bruteforce():
    rng = np.random.default_rng(4)
    g = TimeGrid(np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.3, 12))]))
    a = GridRoughPath(g, rng.normal(size=(13, 2)), rng.normal(size=(12, 2, 2)))
    b = GridRoughPath(g, rng.normal(size=(13, 2)), rng.normal(size=(12, 2, 2)))
    f1 = f2 = 0.0
    for i in range(12):
        for j in range(i + 1, 13):
            gap = g.times[j] - g.times[i]
            f1 = max(f1, np.linalg.norm(a.increment(i, j) - b.increment(i, j)) / gap**0.4)
            f2 = max(f2, np.linalg.norm(chen_area(a, i, j) - chen_area(b, i, j)) / gap**0.8)
    r = holder_distance(a, b, 0.4)
    assert r.first_level == pytest.approx(f1, rel=1e-12)
    assert r.second_level == pytest.approx(f2, rel=1e-10)


def _dyadic_approximation(fine, step):
    # piecewise-linear interpolation of the fine path through every `step`-th node, lifted on the fine grid
    g = fine.grid
    coarse_idx = np.arange(0, g.n + 1, step)
    vals = np.column_stack(
        [np.interp(g.times, g.times[coarse_idx], fine.values[coarse_idx, a]) for a in range(fine.dim)]
    )
    return lift_piecewise_linear(vals, g, fine.alpha)


def test_holder_distance_decreases_under_refinement():
    fine = lift_brownian_stratonovich(21, 2, 2**-12, TimeGrid.uniform(1.0, 2**9))
    ref = fine
    dists = [holder_distance(_dyadic_approximation(fine, s), ref).total for s in (64, 32, 16, 8, 4)]
    assert all(b < a for a, b in zip(dists, dists[1:]))


def test_serialization_roundtrip(tmp_path):
    g = TimeGrid(np.array([0.0, 0.25, 0.7, 1.3]))
    p = lift_brownian_stratonovich(9, 2, 0.01, g)
    text = dump_rough_path(p)
    q = load_rough_path(text)
    assert q.grid == p.grid
    assert q.values.tobytes() == p.values.tobytes()
    assert q.level2.tobytes() == p.level2.tobytes()
    assert q.alpha == p.alpha


def test_translation_matches_lift_of_sum():
    g = TimeGrid.uniform(1.0, 64)
    rng = np.random.default_rng(3)
    y = np.cumsum(rng.normal(size=(65, 2)), axis=0)
    h = np.stack([np.sin(3 * g.times), g.times**2], axis=1)
    moved = lift_piecewise_linear(y, g).translated(h, 0.7)
    direct = lift_piecewise_linear(y + 0.7 * h, g)
    assert np.allclose(moved.values, direct.values, atol=1e-13)
    assert np.allclose(moved.level2, direct.level2, atol=1e-12)


def test_translation_keeps_area_and_geometricity():
    g = TimeGrid.uniform(1.0, 2**8)
    p = lift_brownian_stratonovich(5, 2, 2**-10, g)
    h = np.stack([np.cos(g.times), g.times], axis=1)
    moved = p.translated(h, 0.3)
    assert moved.symmetric_defect() < 1e-12
    area = lambda q: q.level2 - np.swapaxes(q.level2, 1, 2)
    assert np.allclose(area(moved), area(p), atol=1e-12)
    assert p.translated(h, 0.0).values.tolist() == p.values.tolist()
    with pytest.raises(DimensionError):
        p.translated(g.times, 1.0)
