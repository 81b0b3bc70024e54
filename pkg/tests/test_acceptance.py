"""Acceptance criteria at their stated scales and tolerances.

Each test prints one ``ACCEPTANCE`` line with PASS or FAIL, then asserts.
Run ``pytest tests/test_acceptance.py -v -s`` to see the lines inline; they
also appear in the captured output of failing tests.
"""

import json
import math
import time

import numpy as np
import pytest

from roughlq import experiments as ex
from roughlq.cli import main as cli_main, load_config
from roughlq.doss_sussmann import crosscheck_batch, build_transform
from roughlq.integral import ControlledSample, rough_integral
from roughlq.lq import (
    LqSpec,
    closed_loop_batch,
    riccati_backward,
    riccati_residual,
    stationarity_residual,
    transform_for_spec,
)
from roughlq.rough_path import GridRoughPath, TimeGrid, chen_area, lift_brownian_stratonovich, lift_piecewise_linear
from roughlq.rsde import AffineRoughSystem, self_convergence_order, solve_sample
from roughlq.seeding import brownian_increments

from smooth_cases import SmoothCase


def _report(capsys, number, name, passed, started, budget, detail):
    elapsed = time.perf_counter() - started
    ok = bool(passed) and (budget is None or elapsed < budget)
    limit = f" < {budget:.0f}s" if budget is not None else ""
    with capsys.disabled():
        print(f"\nACCEPTANCE {number:2d} {name}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s{limit}; {detail})")
    assert passed, detail
    assert budget is None or elapsed < budget, f"took {elapsed:.1f}s, budget {budget}s"


def _benchmark_spec(g, **over):
    kw = dict(x0=1.0, Gtil=0.5, Btil=lambda t: 1 + 0.5 * t, Dtil=0.5, Mtil=1.0, Ntil=0.5,
              F=lambda t: 0.8 + 0.2 * np.cos(3 * t), f=0.3)
    kw.update(over)
    return LqSpec.build(g, **kw)


def _benchmark_driver(g):
    return lift_brownian_stratonovich(11, 1, 2**-14, g)


def test_1_chen_and_geometricity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_chen, worst_sym = 0.0, 0.0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(2, 2**10 + 1))
        g = TimeGrid(np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, n))]))
        p = lift_piecewise_linear(np.cumsum(rng.normal(size=(n + 1, d)), axis=0), g)
        worst_sym = max(worst_sym, p.symmetric_defect())
        for _ in range(20):
            i, u, j = np.sort(rng.choice(n + 1, 3, replace=False))
            # relative to the largest term entering the identity
            terms = [chen_area(p, i, j), chen_area(p, i, u), chen_area(p, u, j),
                     np.outer(p.increment(i, u), p.increment(u, j))]
            residual = terms[0] - terms[1] - terms[2] - terms[3]
            scale = max(max(float(np.max(np.abs(t))) for t in terms), 1e-300)
            worst_chen = max(worst_chen, float(np.max(np.abs(residual))) / scale)
    _report(capsys, 1, "Chen/geometricity", worst_chen < 1e-10 and worst_sym <= 1e-12, t0, 10,
            f"chen {worst_chen:.2e}, symmetric {worst_sym:.2e}")


def test_2_rough_integral_oracle(capsys):
    t0 = time.perf_counter()
    g = TimeGrid.uniform(1.0, 2**12)
    worst = 0.0
    for seed in range(20):
        case = SmoothCase(seed, 1 + seed % 3)
        driver, sample = case.sample(g)
        ref = case.reference(1.0)
        worst = max(worst, abs(rough_integral(sample, driver)[0] - ref) / max(1.0, abs(ref)))
    shuffle = 0.0
    gb = TimeGrid.uniform(1.0, 2**10)
    for seed in range(10):
        p = lift_brownian_stratonovich(seed, 1, 2**-14, gb)
        eta = p.values[:, 0]
        s = ControlledSample.scalar(gb, eta, 1.0)
        shuffle = max(shuffle, abs(rough_integral(s, p)[0] - 0.5 * (eta[-1] ** 2 - eta[0] ** 2)))
    _report(capsys, 2, "rough integral oracle", worst < 1e-6 and shuffle < 1e-8, t0, 30,
            f"relative error {worst:.2e}, shuffle {shuffle:.2e}")


def test_3_rsde_closed_forms(capsys):
    t0 = time.perf_counter()
    g = TimeGrid.uniform(1.0, 2**12)
    eta = 0.8 * np.sin(2 * np.pi * g.times) + 2.0 * g.times
    p = lift_piecewise_linear(eta, g)
    rough = solve_sample(AffineRoughSystem.scalar(g, F=0.5), p, [1.5], seed=0).x[:, 0]
    err_rough = float(np.max(np.abs(rough - 1.5 * np.exp(0.5 * (eta - eta[0])))))
    flat = lift_piecewise_linear(np.zeros(len(g)), g)
    ode = solve_sample(AffineRoughSystem.scalar(g, b=lambda t, x, u: -x), flat, [2.0], seed=0).x[:, 0]
    err_ode = float(np.max(np.abs(ode - 2.0 * np.exp(-g.times))))

    gb = TimeGrid.uniform(1.0, 2**12)
    pb = lift_brownian_stratonovich(77, 1, 2**-14, gb)
    brown = self_convergence_order(
        AffineRoughSystem.scalar(gb, b=lambda t, x, u: -0.5 * x, sigma=lambda t, x, u: 0.3 * x[..., None], F=1.0),
        pb, [1.0], None, 0, [2.0**-k for k in range(5, 10)])
    gf = TimeGrid.uniform(1.0, 2**14)
    ode_rep = self_convergence_order(
        AffineRoughSystem.scalar(gf, b=lambda t, x, u: -x + np.sin(3 * t)),
        lift_piecewise_linear(np.zeros(len(gf)), gf), [1.0], None, 0, [2.0**-k for k in range(6, 11)])
    ok = err_rough < 1e-4 and err_ode < 1e-4 and brown.order >= 0.4 and ode_rep.order >= 0.95
    _report(capsys, 3, "rSDE closed forms", ok, t0, 60,
            f"exp {err_rough:.1e}, ode {err_ode:.1e}, orders {brown.order:.2f}/{ode_rep.order:.2f}")


def test_4_doss_sussmann_crosscheck(capsys):
    t0 = time.perf_counter()
    seeds = range(100)
    dWf = np.stack([brownian_increments(s, np.full(2**12, 2.0**-12), 1) for s in seeds])
    gaps = []
    for lv in (10, 11, 12):
        g = TimeGrid.uniform(1.0, 2**lv)
        p = lift_piecewise_linear(0.8 * np.sin(2 * np.pi * g.times) + 0.5 * g.times, g)
        system = AffineRoughSystem.scalar(g, b=lambda t, x, u: -0.5 * x + 0.3,
                                          sigma=lambda t, x, u: 0.3 * x[..., None] + 0.1, F=1.0, f=0.2)
        dW = dWf.reshape(len(seeds), 2**lv, -1, 1).sum(axis=2)
        gaps.append(crosscheck_batch(system, p, [1.0], None, dW).relative_gap)
    ratios = [gaps[0] / gaps[1], gaps[1] / gaps[2]]
    gb = TimeGrid.uniform(1.0, 2**12)
    defect = 0.0
    for s in range(0, 100, 10):
        pb = lift_brownian_stratonovich(s, 1, 2**-14, gb)
        tr = build_transform(np.ones((len(gb), 1, 1, 1)), 0.0, np.full((len(gb), 1, 1), 0.2), 0.0, pb)
        defect = max(defect, tr.product_defect)
    ok = gaps[2] < 1e-2 and all(1.5 <= r <= 2.5 for r in ratios) and defect < 1e-6
    _report(capsys, 4, "Doss-Sussmann cross-check", ok, t0, 120,
            f"gap {gaps[2]:.2e}, halving ratios {ratios[0]:.2f}/{ratios[1]:.2f}, defect {defect:.1e}")


def test_5_riccati_suite(capsys):
    t0 = time.perf_counter()
    g = TimeGrid.uniform(1.0, 2**8)
    flat = lift_piecewise_linear(np.zeros(len(g)), g)
    square = LqSpec.build(g, x0=1.0, Btil=1.0, Ntil=1.0, Mtil=0.0, Gtil=0.5)
    ric = riccati_backward(square, transform_for_spec(square, flat))
    p0_err = abs(ric.P[0] - 0.5)

    gb = TimeGrid.uniform(1.0, 2**8)
    spec = _benchmark_spec(gb)
    tr = transform_for_spec(spec, _benchmark_driver(gb))
    rb = riccati_backward(spec, tr)
    terminal = rb.P[-1] == 2 * rb.hatG * tr.A[-1, 0, 0] and rb.q[-1] == 2 * rb.hatG * tr.zeta[-1, 0] \
        and rb.r[-1] == spec.Gtil * tr.zeta[-1, 0] ** 2

    res = []
    for lv in (7, 8, 9):
        gs = TimeGrid.uniform(1.0, 2**lv)
        smooth = lift_piecewise_linear(0.6 * np.sin(2 * gs.times), gs)
        s = _benchmark_spec(gs, F=0.8)
        res.append(riccati_residual(riccati_backward(s, transform_for_spec(s, smooth))))
    orders = [math.log2(res[0] / res[1]), math.log2(res[1] / res[2])]

    rng = np.random.default_rng(5)
    positive = True
    gp = TimeGrid.uniform(1.0, 64)
    for i in range(40):
        M, G, N, D = rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0.05, 3), rng.uniform(-2, 2)
        sp = LqSpec.build(gp, x0=1.0, Dtil=D, Mtil=M, Ntil=N, Gtil=G, F=0.7, f=-0.2)
        rp = riccati_backward(sp, transform_for_spec(sp, lift_brownian_stratonovich(i, 1, 2**-8, gp)))
        positive &= bool(np.all(rp.P >= 0) and rp.denom_min > 0)
    ok = p0_err < 1e-6 and terminal and all(o > 1.8 for o in orders) and positive
    _report(capsys, 5, "Riccati suite", ok, t0, 5,
            f"P0 error {p0_err:.1e}, terminal exact {terminal}, residual orders {orders[0]:.2f}/{orders[1]:.2f}, "
            f"positive {positive}")


def test_6_smp_stationarity_and_gradients(capsys):
    t0 = time.perf_counter()
    g = TimeGrid.uniform(1.0, 2**8)
    spec = _benchmark_spec(g)
    driver = _benchmark_driver(g)
    tr = transform_for_spec(spec, driver)
    ric = riccati_backward(spec, tr)
    run = closed_loop_batch(spec, tr, ex.brownian_block(ex.sample_seeds(3, 0, 200), g.dt), None, ric)
    stat = stationarity_residual(spec, tr, ric, run)
    dirs = {"one": np.ones(len(g)), "ramp": g.times, "cos": np.cos(np.pi * g.times)}
    at_opt = ex.gradient_check(spec, driver, None, dirs, 0.05, 10_000, 17)
    base = ex.optimal_affine_feedback(ric).shifted(0.3)
    off_opt = ex.gradient_check(spec, driver, base, dirs, 0.05, 10_000, 17)
    compared = sum(off_opt.compared) + sum(at_opt.compared)
    ok = stat < 1e-6 and at_opt.passed and off_opt.passed and compared > 0
    _report(capsys, 6, "SMP stationarity and gradients", ok, t0, 300,
            f"stationarity {stat:.1e}, compared {compared}, "
            f"mismatch {max(at_opt.max_relative_mismatch, off_opt.max_relative_mismatch):.3f}")


def test_7_perturbation_suboptimality(capsys):
    t0 = time.perf_counter()
    g = TimeGrid.uniform(1.0, 2**8)
    spec = _benchmark_spec(g)
    driver = _benchmark_driver(g)
    tr = transform_for_spec(spec, driver)
    ric = riccati_backward(spec, tr)
    dirs = {f"random_{i}": v for i, v in enumerate(ex.random_directions(29, 20, g))}
    dirs["neg_optimal"] = ex.negative_optimal
    rep = ex.perturbation_test(spec, tr, ric, driver, dirs, [0.01, 0.1, 0.5], 10_000, 29)
    worst = min(r.diff / r.combined_se for r in rep.rows)
    _report(capsys, 7, "perturbation suboptimality", rep.passed and len(rep.rows) == 63, t0, 600,
            f"{len(rep.rows)} perturbations, worst {worst:+.2f} combined SE")


def test_8_pathwise_equivalence(capsys):
    t0 = time.perf_counter()
    g = TimeGrid.uniform(1.0, 2**8)
    rep = ex.pathwise_equivalence(_benchmark_spec(g), 200, 500, master_seed=13, fine_mesh=2**-14)
    flat = ex.pathwise_equivalence(_benchmark_spec(g, F=0.0, f=0.0), 200, 500, master_seed=13, fine_mesh=2**-14,
                                   n_joint=200)
    ok = rep.passed and flat.value_variance < 1e-10
    _report(capsys, 8, "pathwise equivalence", ok, t0, 900,
            f"|diff| {abs(rep.difference):.4f} vs 2 SE {2 * rep.combined_se:.4f}, "
            f"degenerate variance {flat.value_variance:.1e}")


def test_9_ito_lyons_continuity(capsys):
    t0 = time.perf_counter()
    g = TimeGrid.uniform(1.0, 2**14)
    ref = lift_brownian_stratonovich(21, 1, 2**-14, g)
    system = AffineRoughSystem.scalar(g, b=lambda t, x, u: -0.5 * x, sigma=lambda t, x, u: 0.3 * x[..., None],
                                      F=1.0, f=0.2)
    drivers = ex.subsampled_drivers(ref, [256, 128, 64, 32, 16, 8, 4])
    cont = ex.ito_lyons_convergence(system, drivers, [1.0], seed=4, slack=0.1, alpha=0.35)
    resp = ex.linear_response(system, ref, np.sin(2 * np.pi * g.times), [0.1, 0.05, 0.025, 0.0125], [1.0], seed=4)
    resp_ok = all(abs(r - 0.5) <= 0.1 for r in resp.ratios)
    ok = cont.monotone and cont.distances_decreasing and resp_ok
    _report(capsys, 9, "Ito-Lyons continuity", ok, t0, 120,
            f"gaps {' '.join(f'{x:.3f}' for x in cont.gaps)}, ratios {' '.join(f'{r:.3f}' for r in resp.ratios)}")


def _small_configs():
    over = {
        "benchmark_lq": {"numerics": {"mesh": 2**-6, "fine_mesh": 2**-10, "tolerances": {"riccati_residual": 5e-2}},
                         "experiment": {"n_samples": 1500}},
        "lift": {},
        "rsde": {},
        "transform_check": {"numerics": {"mesh": 2**-10}, "experiment": {"n_samples": 30}},
        "smp_check": {"experiment": {"n_samples": 1200, "n_directions": 3}},
        "equivalence": {"numerics": {"mesh": 2**-5, "fine_mesh": 2**-8}, "experiment": {"n_outer": 20, "n_inner": 60}},
        "convergence": {},
        "ito_check": {"numerics": {"mesh": 2**-10, "fine_mesh": 2**-12},
                      "experiment": {"steps": [64, 16, 4], "eps_values": [0.1, 0.05, 0.025]}},
    }
    for name, sections in over.items():
        cfg = load_config(f"bundled:{name}")
        for section, values in sections.items():
            cfg[section].update(values)
        yield name, cfg


def test_10_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    identical, names = True, []
    for name, cfg in _small_configs():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        outputs = []
        for run, threads in enumerate((1, 3, 1)):
            out = tmp_path / f"{name}_{run}"
            assert cli_main(["--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same = outputs[0] == outputs[1] == outputs[2]
        identical &= same
        names.append(f"{name}={'same' if same else 'DIFF'}")
    g = TimeGrid.uniform(1.0, 2**5)
    spec = _benchmark_spec(g)
    driver = _benchmark_driver(g)
    texts = {ex.report_to_json(ex.gradient_check(spec, driver, None, {"one": np.ones(len(g))}, 0.05, 1100, 3, t))
             for t in (1, 2, 4)}
    identical &= len(texts) == 1
    _report(capsys, 10, "determinism", identical, t0, None, ", ".join(names))
