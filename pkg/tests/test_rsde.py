import numpy as np
import pytest
from scipy.linalg import expm

from roughlq.errors import DimensionError, NumericalBlowupError, ParameterError
from roughlq.rough_path import GridRoughPath, TimeGrid, lift_brownian_stratonovich, lift_piecewise_linear
from roughlq.rsde import (
    AffineRoughSystem,
    davie_step,
    self_convergence_order,
    solve_batch,
    solve_linear_rde,
    solve_sample,
    trajectories_to_csv,
)
from roughlq.seeding import brownian_increments


def _linear_driver(n, T=1.0, slope=1.0):
    g = TimeGrid.uniform(T, n)
    return g, lift_piecewise_linear(slope * g.times, g)


def test_davie_step_degenerate_euler():
    g, p = _linear_driver(4)
    sys = AffineRoughSystem(g, 2, 2, 1, sigma=lambda t, x, u: np.broadcast_to(np.eye(2), x.shape + (2,)))
    x = np.array([0.5, -1.0])
    dW = np.array([0.1, 0.2])
    np.testing.assert_allclose(davie_step(sys, p, 1, x, None, dW), x + dW)


def test_davie_step_exponential_jet():
    g = TimeGrid.uniform(1.0, 3)
    p = lift_brownian_stratonovich(1, 1, 2**-8, g)
    c = 0.7
    sys = AffineRoughSystem.scalar(g, F=c)
    x = np.array([1.3])
    d, e2 = p.increments[1, 0], p.level2[1, 0, 0]
    expected = 1.3 * (1 + c * d + c**2 * e2)
    assert davie_step(sys, p, 1, x, None, [0.0])[0] == pytest.approx(expected, rel=1e-14)
    # geometric 1d: eta2 = d^2/2, the 2-jet of exp(c d)
    assert e2 == pytest.approx(0.5 * d * d, rel=1e-12)


def test_davie_step_additive_forcing():
    g = TimeGrid.uniform(1.0, 3)
    p = lift_brownian_stratonovich(1, 1, 2**-8, g)
    sys = AffineRoughSystem.scalar(g, f=2.5)
    assert davie_step(sys, p, 2, np.array([1.0]), None, [0.0])[0] == pytest.approx(1.0 + 2.5 * p.increments[2, 0])


def test_davie_step_blowup():
    g, p = _linear_driver(2)
    sys = AffineRoughSystem.scalar(g, b=lambda t, x, u: x * 1e308)
    with pytest.raises(NumericalBlowupError) as info:
        davie_step(sys, p, 1, np.array([1e10]), None, [0.0])
    assert info.value.interval == 1


def test_solve_sample_brownian_identity():
    g, p = _linear_driver(64)
    sys = AffineRoughSystem.scalar(g, sigma=lambda t, x, u: np.ones(x.shape + (1,)))
    tr = solve_sample(sys, p, [0.0], seed=12)
    dW = brownian_increments(12, g.dt, 1)
    np.testing.assert_allclose(tr.x[:, 0], np.concatenate([[0.0], np.cumsum(dW[:, 0])]), atol=1e-14)
    assert tr.x[0, 0] == 0.0


def test_solve_sample_rough_exponential():
    g, p = _linear_driver(2**12, slope=2.0)
    sys = AffineRoughSystem.scalar(g, F=0.5)
    tr = solve_sample(sys, p, [1.5], seed=0)
    assert tr.x[-1, 0] == pytest.approx(1.5 * np.e, abs=1e-4 * 1.5)
    # stored Gubinelli derivative is exactly F x + f
    np.testing.assert_array_equal(tr.zprime[:, 0, 0], 0.5 * tr.x[:, 0])


def test_solve_sample_ode():
    g, p = _linear_driver(2**12)
    sys = AffineRoughSystem.scalar(g, b=lambda t, x, u: -x)
    tr = solve_sample(sys, p, [2.0], seed=0)
    assert tr.x[-1, 0] == pytest.approx(2.0 * np.exp(-1.0), abs=1e-4)


def test_solve_sample_records_control():
    g, p = _linear_driver(8)
    sys = AffineRoughSystem.scalar(g, b=lambda t, x, u: u)
    tr = solve_sample(sys, p, [0.0], control=lambda t, x: np.full_like(x, t), seed=0)
    np.testing.assert_allclose(tr.control[:, 0], g.times)
    csv = trajectories_to_csv([tr, tr])
    assert csv.splitlines()[0] == "sample,t,x_1,u_1"
    assert len(csv.splitlines()) == 1 + 2 * 9


def test_homogeneity_exact():
    g = TimeGrid.uniform(1.0, 128)
    p = lift_brownian_stratonovich(5, 2, 2**-10, g)
    rng = np.random.default_rng(0)
    F = rng.normal(size=(2, 2, 2))
    sys = AffineRoughSystem(g, 2, 1, 2, F=F)
    x0 = np.array([0.3, -0.8])
    a = solve_sample(sys, p, x0, seed=1).x
    b = solve_sample(sys, p, 3.0 * x0, seed=1).x
    np.testing.assert_allclose(b, 3.0 * a, rtol=1e-13, atol=1e-14)


def test_flow_property_exact():
    g = TimeGrid.uniform(1.0, 100)
    p = lift_brownian_stratonovich(6, 1, 2**-10, g)
    sys = AffineRoughSystem.scalar(
        g, b=lambda t, x, u: -0.5 * x, sigma=lambda t, x, u: 0.3 * x[..., None], F=0.8, f=0.1
    )
    full = solve_sample(sys, p, [1.0], seed=4)
    idx1 = np.arange(0, 41)
    idx2 = np.arange(40, 101)
    p1 = GridRoughPath(TimeGrid(g.times[idx1]), p.values[idx1], p.level2[:40], p.alpha)
    first = solve_sample(sys.restrict(idx1), p1, [1.0], dW=full.w_increments[:40])
    g2 = TimeGrid(g.times[idx2] - g.times[40])
    sys2 = AffineRoughSystem.scalar(
        g2, b=lambda t, x, u: -0.5 * x, sigma=lambda t, x, u: 0.3 * x[..., None], F=0.8, f=0.1
    )
    p2 = GridRoughPath(g2, p.values[40:], p.level2[40:], p.alpha)
    second = solve_sample(sys2, p2, first.x[-1], dW=full.w_increments[40:])
    np.testing.assert_array_equal(np.concatenate([first.x, second.x[1:]]), full.x)


def test_batch_flags_blowups():
    g, p = _linear_driver(4)
    sys = AffineRoughSystem.scalar(g, b=lambda t, x, u: x * x * 1e200)
    x, _, failed = solve_batch(sys, p, np.array([[1e-300], [1e60]]), None, np.zeros((2, 4, 1)), flag_blowups=True)
    assert failed.tolist() == [False, True]
    assert np.all(np.isnan(x[1]))
    with pytest.raises(NumericalBlowupError):
        solve_batch(sys, p, np.array([[1e60]]), None, np.zeros((1, 4, 1)))


def test_system_driver_mismatch():
    g, p = _linear_driver(4)
    sys = AffineRoughSystem.scalar(TimeGrid.uniform(1.0, 5))
    with pytest.raises(DimensionError):
        solve_sample(sys, p, [0.0])


def test_linear_rde_zero_is_constant():
    g, p = _linear_driver(16)
    tr = solve_linear_rde(np.zeros((17, 2, 2, 1)), 0.0, 0.0, 0.0, p, [1.0, 2.0])
    np.testing.assert_array_equal(tr.x, np.tile([1.0, 2.0], (17, 1)))


def test_linear_rde_brownian_exponential():
    g = TimeGrid.uniform(1.0, 2**10)
    p = lift_brownian_stratonovich(31, 1, 2**-14, g)
    tr = solve_linear_rde(np.ones((len(g), 1, 1, 1)), 0.0, 0.0, 0.0, p, [0.9])
    exact = 0.9 * np.exp(p.increment(0, g.n)[0])
    assert abs(tr.x[-1, 0] / exact - 1) < 1e-2


def test_linear_rde_commuting_matrix_exponential():
    g = TimeGrid.uniform(1.0, 2**10)
    p = lift_brownian_stratonovich(32, 1, 2**-12, g)
    base = np.array([[0.3, 0.8], [-0.2, 0.1]])
    F = np.broadcast_to(base[:, :, None], (len(g), 2, 2, 1))
    x0 = np.array([1.0, -0.5])
    tr = solve_linear_rde(F, 0.0, 0.0, 0.0, p, x0)
    exact = expm(base * p.increment(0, g.n)[0]) @ x0
    np.testing.assert_allclose(tr.x[-1], exact, atol=1e-3)


def test_linear_rde_matches_davie_at_second_order():
    # both schemes share the 2-jet: one-step differences are third order in the increment
    g = TimeGrid.uniform(1.0, 2**8)
    p = lift_brownian_stratonovich(2, 2, 2**-12, g)
    rng = np.random.default_rng(9)
    F = rng.normal(size=(2, 2, 2)) * 0.5
    f = rng.normal(size=(2, 2)) * 0.5
    sys = AffineRoughSystem(g, 2, 1, 2, F=F, f=f)
    x0 = np.array([0.4, 1.0])
    a = solve_sample(sys, p, x0).x
    b = solve_linear_rde(sys.F, sys.Fprime, sys.f, sys.fprime, p, x0).x
    # difference shrinks with mesh like the scheme error
    assert np.max(np.abs(a - b)) < 0.05


def test_self_convergence_ode():
    g = TimeGrid.uniform(1.0, 2**14)
    p = lift_piecewise_linear(np.zeros(len(g)), g)
    sys = AffineRoughSystem.scalar(g, b=lambda t, x, u: -x + np.sin(3 * t))
    rep = self_convergence_order(sys, p, [1.0], None, 0, [2.0**-k for k in range(6, 11)])
    assert rep.order >= 0.95


def test_self_convergence_rough_brownian():
    g = TimeGrid.uniform(1.0, 2**12)
    p = lift_brownian_stratonovich(77, 1, 2**-14, g)
    sys = AffineRoughSystem.scalar(g, F=1.0)
    rep = self_convergence_order(sys, p, [1.0], None, 0, [2.0**-k for k in range(5, 10)])
    assert rep.order >= 0.4


def test_self_convergence_zero_system_exact():
    g = TimeGrid.uniform(1.0, 2**8)
    p = lift_brownian_stratonovich(0, 1, 2**-10, g)
    sys = AffineRoughSystem.scalar(g)
    rep = self_convergence_order(sys, p, [0.0], None, 0, [2.0**-4, 2.0**-5, 2.0**-6])
    assert rep.exact and rep.errors == (0.0, 0.0, 0.0)


def test_self_convergence_needs_three_meshes():
    g = TimeGrid.uniform(1.0, 2**6)
    p = lift_piecewise_linear(np.zeros(len(g)), g)
    with pytest.raises(ParameterError):
        self_convergence_order(AffineRoughSystem.scalar(g), p, [0.0], None, 0, [0.25, 0.125])
