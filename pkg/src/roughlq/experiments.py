"""Monte Carlo checks of the rough LQ pipeline.

Every sample draws its Brownian increments from ``derive_seed(master, stream,
index)``.  Samples are processed in fixed-size chunks, so the numbers do not
depend on the thread count, and sums go through ``math.fsum``.  Comparative
estimators reuse identical noise across the compared configurations.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionError,
    EnsembleFailureError,
    NumericalBlowupError,
    ParameterError,
    PositivityViolationError,
    RiccatiSingularityError,
    InversionConsistencyError,
)
from .lq import (
    AffineFeedback,
    LqSpec,
    RiccatiSolution,
    adjoint_pair_lq,
    closed_loop_batch,
    feedback_adjoint,
    optimal_affine_feedback,
    riccati_backward,
    transform_for_spec,
)
from .doss_sussmann import TransformData
from .rough_path import (
    GridRoughPath,
    holder_distance,
    lift_brownian_stratonovich,
    lift_piecewise_linear,
    path_digest,
)
from .rsde import AffineRoughSystem, solve_batch
from .seeding import brownian_increments, derive_seed, rng_for

W_STREAM = 0
B_STREAM = 1
JOINT_B_STREAM = 2
JOINT_W_STREAM = 3
DIRECTION_STREAM = 4
CHUNK = 500

# -- plumbing ------------------------------------------------------------------


def sample_seeds(master_seed: int, stream: int, n: int) -> list[int]:
    return [derive_seed(master_seed, stream, i) for i in range(n)]


def brownian_block(seeds: Sequence[int], dt: np.ndarray, dim: int = 1) -> np.ndarray:
    """Increments for each seed, shape (S, n, dim)."""
    return np.stack([brownian_increments(s, dt, dim) for s in seeds])


def map_chunks(fn: Callable[[Sequence[int]], object], seeds: Sequence[int], threads: int = 1, chunk: int = CHUNK):
    """Apply ``fn`` to consecutive fixed-size seed blocks; results come back in block order."""
    blocks = [seeds[i:i + chunk] for i in range(0, len(seeds), chunk)]
    if threads <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def fsum_mean(x: np.ndarray) -> float:
    return math.fsum(np.asarray(x, dtype=float).ravel().tolist()) / x.size


def fsum_stderr(x: np.ndarray) -> float:
    """Sample standard deviation over ``sqrt(n)``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        return math.nan
    m = fsum_mean(x)
    var = math.fsum(((x - m) ** 2).tolist()) / (x.size - 1)
    return math.sqrt(var / x.size)


def spec_digest(spec: LqSpec) -> str:
    h = hashlib.sha256()
    for name in ("Atil", "Btil", "Ctil", "Dtil", "btil", "sigtil", "Mtil", "Ntil", "F", "Fprime", "f", "fprime"):
        h.update(np.ascontiguousarray(getattr(spec, name)).tobytes())
    h.update(np.array([spec.Gtil, spec.x0, spec.n_min], dtype=float).tobytes())
    h.update(spec.grid.times.tobytes())
    h.update(repr(spec.control_bounds).encode())
    return h.hexdigest()[:16]


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_to_json(report) -> str:
    return json.dumps(_plain(report), indent=2, sort_keys=True) + "\n"


# -- ensembles -----------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleReport:
    n_samples: int
    mean: float
    stderr: float
    seeds: tuple
    failures: int
    failed_samples: tuple = ()
    metadata: dict = field(default_factory=dict)


def summarize(values: np.ndarray, seeds: Sequence[int], metadata: dict | None = None) -> EnsembleReport:
    """Mean and standard error over finite samples; non-finite ones are reported as failures."""
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    if not ok.any():
        raise EnsembleFailureError(f"all {values.size} samples failed")
    good = values[ok]
    failed = tuple(int(i) for i in np.flatnonzero(~ok))
    return EnsembleReport(
        int(good.size), fsum_mean(good), fsum_stderr(good), tuple(int(s) for s in seeds),
        len(failed), failed, dict(metadata or {}),
    )


@dataclass(frozen=True, eq=False)
class SystemProblem:
    """A general controlled rough SDE with running and terminal costs.

    ``running_cost(t, x, u)`` and ``terminal_cost(x)`` act on batches of
    states ``(S, dx)`` and return ``(S,)``.
    """

    system: AffineRoughSystem
    x0: np.ndarray
    running_cost: Callable
    terminal_cost: Callable


def _system_costs(problem: SystemProblem, driver: GridRoughPath, control, dW: np.ndarray) -> tuple[np.ndarray, list]:
    x, controls, failed = solve_batch(problem.system, driver, problem.x0, control, dW, flag_blowups=True)
    grid = driver.grid
    run = np.zeros(x.shape[0])
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(grid.n):
            u = None if controls is None else controls[k]
            run = run + np.asarray(problem.running_cost(grid.times[k], x[:, k], u), dtype=float) * grid.dt[k]
        cost = run + np.asarray(problem.terminal_cost(x[:, -1]), dtype=float)
    cost[failed] = np.nan
    return cost, controls


def _lq_setup(spec: LqSpec, driver: GridRoughPath, transform, ric):
    if transform is None:
        transform = transform_for_spec(spec, driver)
    if ric is None and spec.in_closed_form_scope:
        ric = riccati_backward(spec, transform)
    return transform, ric


def cost_monte_carlo(problem, driver: GridRoughPath, control=None, n_samples: int = 1000, master_seed: int = 0,
                     threads: int = 1, transform: TransformData | None = None,
                     ric: RiccatiSolution | None = None) -> EnsembleReport:
    """Monte Carlo estimate of the expected cost of ``control``.

    ``problem`` is an :class:`LqSpec` (control: feedback in transformed
    coordinates, open-loop array, or ``None`` for the optimal feedback) or a
    :class:`SystemProblem` (control: callback ``(t, x)`` in original
    coordinates).
    """
    if n_samples < 2:
        raise ParameterError("need at least two samples")
    seeds = sample_seeds(master_seed, W_STREAM, n_samples)
    grid = driver.grid
    meta = {"mesh": grid.mesh, "driver": path_digest(driver)}
    if isinstance(problem, LqSpec):
        transform, ric = _lq_setup(problem, driver, transform, ric)
        meta["spec"] = spec_digest(problem)

        def work(block):
            dW = brownian_block(block, grid.dt)
            return closed_loop_batch(problem, transform, dW, control, ric).cost
    elif isinstance(problem, SystemProblem):
        def work(block):
            dW = brownian_block(block, grid.dt, problem.system.dim_w)
            return _system_costs(problem, driver, control, dW)[0]
    else:
        raise ParameterError(f"unsupported problem type {type(problem).__name__}")
    costs = np.concatenate(map_chunks(work, seeds, threads))
    return summarize(costs, seeds, meta)


# -- gradients -----------------------------------------------------------------


def _direction_values(direction, base_u: np.ndarray) -> np.ndarray:
    if callable(direction):
        return np.asarray(direction(base_u), dtype=float)
    return np.broadcast_to(np.asarray(direction, dtype=float), base_u.shape)


def _lq_perturbed_costs(spec, transform, ric, base, directions, eps_values, dW):
    """Costs of ``u_base + eps v`` with the base control frozen along each sample.

    Returns the base cost ``(S,)`` and an array ``(len(directions), len(eps), S)``.
    """
    base_run = closed_loop_batch(spec, transform, dW, base, ric)
    out = np.empty((len(directions), len(eps_values), dW.shape[0]))
    for i, v in enumerate(directions):
        vv = _direction_values(v, base_run.raw_u)
        for j, eps in enumerate(eps_values):
            out[i, j] = closed_loop_batch(spec, transform, dW, base_run.raw_u + eps * vv, ric).cost
    return base_run.cost, out


@dataclass(frozen=True)
class DerivativeEstimate:
    value: float
    stderr: float
    n_samples: int


def finite_difference_gradient(problem, driver: GridRoughPath, base_control, direction, epsilon: float,
                               n_samples: int = 1000, master_seed: int = 0, threads: int = 1,
                               transform: TransformData | None = None,
                               ric: RiccatiSolution | None = None) -> DerivativeEstimate:
    """Central difference ``(J(u + eps v) - J(u - eps v)) / (2 eps)`` with common random numbers.

    The base control is realized once per sample and frozen; ``v`` is a
    per-node array or a callable of the realized base control.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    seeds = sample_seeds(master_seed, W_STREAM, n_samples)
    grid = driver.grid
    if isinstance(problem, LqSpec):
        transform, ric = _lq_setup(problem, driver, transform, ric)

        def work(block):
            dW = brownian_block(block, grid.dt)
            _, c = _lq_perturbed_costs(problem, transform, ric, base_control, [direction], [epsilon, -epsilon], dW)
            return (c[0, 0] - c[0, 1]) / (2 * epsilon)
    elif isinstance(problem, SystemProblem):
        def work(block):
            dW = brownian_block(block, grid.dt, problem.system.dim_w)
            _, controls = _system_costs(problem, driver, base_control, dW)
            if controls is None:
                raise ParameterError("finite differences need a base control")
            base_u = np.stack([np.asarray(c, dtype=float).reshape(len(block), -1) for c in controls], axis=1)
            vv = _direction_values(direction, base_u[..., 0])[..., None]

            def frozen(sign):
                def ctrl(t, x):
                    k = grid.node_of(t)
                    return base_u[:, k] + sign * epsilon * vv[:, k]
                return ctrl

            plus = _system_costs(problem, driver, frozen(1.0), dW)[0]
            minus = _system_costs(problem, driver, frozen(-1.0), dW)[0]
            return (plus - minus) / (2 * epsilon)
    else:
        raise ParameterError(f"unsupported problem type {type(problem).__name__}")
    vals = np.concatenate(map_chunks(work, seeds, threads))
    rep = summarize(vals, seeds)
    return DerivativeEstimate(rep.mean, rep.stderr, rep.n_samples)


def adjoint_gradient(spec: LqSpec, transform: TransformData, ric: RiccatiSolution, base_control: AffineFeedback | None,
                     direction, driver: GridRoughPath, n_samples: int = 1000, master_seed: int = 0,
                     threads: int = 1) -> DerivativeEstimate:
    """Monte Carlo average of ``int (N~ u + hatB Y~ + hatD Z~) v dt`` along the controlled path.

    ``base_control`` is an affine feedback in transformed coordinates
    (``None`` means the optimal one).  At the optimal feedback the adjoint is
    the Riccati ansatz ``(P X~ + q, P hatD u)``; otherwise it is
    ``Y~ = Pi X~ + pi`` from :func:`feedback_adjoint`.
    """
    if not spec.in_closed_form_scope:
        raise ParameterError("adjoint gradient needs the closed-form LQ scope")
    base = optimal_affine_feedback(ric) if base_control is None else base_control
    adj = None if base.optimal else feedback_adjoint(ric, base)
    seeds = sample_seeds(master_seed, W_STREAM, n_samples)
    dt = driver.grid.dt

    def work(block):
        run = closed_loop_batch(spec, transform, brownian_block(block, dt), base, ric)
        y, z = adjoint_pair_lq(ric, run.xt, run.u) if adj is None else adj.pair(ric, run.xt, run.u)
        grad = ric.Ntil * run.u + ric.hatB * y + ric.hatD * z
        vv = _direction_values(direction, run.raw_u)
        return np.sum((grad * vv)[:, :-1] * dt, axis=1)

    vals = np.concatenate(map_chunks(work, seeds, threads))
    rep = summarize(vals, seeds)
    return DerivativeEstimate(rep.mean, rep.stderr, rep.n_samples)


@dataclass(frozen=True)
class GradientReport:
    directions: tuple
    adjoint: tuple
    adjoint_stderr: tuple
    fd: tuple
    fd_half: tuple
    fd_stderr: tuple
    epsilon: float
    compared: tuple
    relative_mismatch: tuple
    richardson_ok: tuple
    max_relative_mismatch: float
    threshold_se: float = 10.0

    @property
    def passed(self) -> bool:
        return all(self.richardson_ok) and (self.max_relative_mismatch < 0.05 if any(self.compared) else True)


def gradient_check(spec: LqSpec, driver: GridRoughPath, base_control: AffineFeedback | None, directions: dict,
                   epsilon: float, n_samples: int, master_seed: int, threads: int = 1,
                   threshold_se: float = 10.0) -> GradientReport:
    """Adjoint against central differences at ``eps`` and ``eps / 2`` for named directions.

    A direction is compared when the finite-difference estimate exceeds
    ``threshold_se`` of its own standard errors; the adjoint's spread is not
    used because at the optimum it only measures roundoff.
    """
    transform, ric = _lq_setup(spec, driver, None, None)
    base = optimal_affine_feedback(ric) if base_control is None else base_control
    names, adj, adj_se, fd, fd2, fd_se, compared, mism, rich = [], [], [], [], [], [], [], [], []
    for name, v in directions.items():
        a = adjoint_gradient(spec, transform, ric, base, v, driver, n_samples, master_seed, threads)
        f1 = finite_difference_gradient(spec, driver, base, v, epsilon, n_samples, master_seed, threads, transform, ric)
        f2 = finite_difference_gradient(spec, driver, base, v, epsilon / 2, n_samples, master_seed, threads, transform, ric)
        big = abs(f2.value) > threshold_se * f2.stderr
        rel = abs(a.value - f2.value) / abs(f2.value) if f2.value != 0 else (0.0 if a.value == 0 else math.inf)
        names.append(name)
        adj.append(a.value)
        adj_se.append(a.stderr)
        fd.append(f1.value)
        fd2.append(f2.value)
        fd_se.append(f2.stderr)
        compared.append(bool(big))
        mism.append(rel)
        rich.append(abs(f2.value - a.value) <= abs(f1.value - a.value) + 1e-9 * (1 + abs(f1.value)))
    worst = max((m for m, c in zip(mism, compared) if c), default=0.0)
    return GradientReport(tuple(names), tuple(adj), tuple(adj_se), tuple(fd), tuple(fd2), tuple(fd_se), epsilon,
                          tuple(compared), tuple(mism), tuple(rich), worst, threshold_se)


# -- perturbation test ---------------------------------------------------------


def random_directions(master_seed: int, count: int, grid, modes: int = 4) -> list[np.ndarray]:
    """Seeded cosine series on the grid, scaled to unit sup norm."""
    out = []
    for i in range(count):
        c = rng_for(derive_seed(master_seed, DIRECTION_STREAM, i)).uniform(-1.0, 1.0, modes)
        v = sum(c[j] * np.cos(j * math.pi * grid.times / grid.T) for j in range(modes))
        out.append(v / np.max(np.abs(v)))
    return out


def negative_optimal(u: np.ndarray) -> np.ndarray:
    """Direction ``v = -u*``, scaling the optimal control toward zero."""
    return -u


@dataclass(frozen=True)
class PerturbationRow:
    direction: str
    epsilon: float
    mean: float
    stderr: float
    diff: float
    combined_se: float
    passed: bool


@dataclass(frozen=True)
class PerturbationReport:
    baseline_mean: float
    baseline_stderr: float
    rows: tuple
    n_samples: int
    master_seed: int
    threshold_se: float = 2.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def perturbation_test(spec: LqSpec, transform: TransformData, ric: RiccatiSolution, driver: GridRoughPath,
                      directions: dict, eps_values: Sequence[float], n_samples: int, master_seed: int,
                      threads: int = 1, threshold_se: float = 2.0) -> PerturbationReport:
    """Check that no tested ``u* + eps v`` beats ``u*`` by more than ``threshold_se`` combined SEs."""
    if not spec.in_closed_form_scope:
        raise ParameterError("perturbation test needs the closed-form LQ scope")
    names = list(directions)
    vs = [directions[n] for n in names]
    seeds = sample_seeds(master_seed, W_STREAM, n_samples)
    dt = driver.grid.dt

    def work(block):
        return _lq_perturbed_costs(spec, transform, ric, None, vs, list(eps_values), brownian_block(block, dt))

    parts = map_chunks(work, seeds, threads)
    base = np.concatenate([p[0] for p in parts])
    costs = np.concatenate([p[1] for p in parts], axis=2)
    b_mean, b_se = fsum_mean(base), fsum_stderr(base)
    rows = []
    for i, name in enumerate(names):
        for j, eps in enumerate(eps_values):
            m, se = fsum_mean(costs[i, j]), fsum_stderr(costs[i, j])
            comb = math.hypot(b_se, se)
            diff = m - b_mean
            rows.append(PerturbationRow(name, float(eps), m, se, diff, comb, bool(diff >= -threshold_se * comb)))
    return PerturbationReport(b_mean, b_se, tuple(rows), n_samples, master_seed, threshold_se)


# -- rough vs pathwise value ---------------------------------------------------


@dataclass(frozen=True)
class EquivalenceReport:
    nested_mean: float
    nested_stderr: float
    joint_mean: float
    joint_stderr: float
    difference: float
    combined_se: float
    passed: bool
    values: tuple
    value_variance: float
    value_quantiles: dict
    n_outer: int
    n_inner: int
    n_joint: int
    outer_failures: int
    joint_failures: int


class _DriverFailure(Exception):
    pass


def _driver_solution(spec: LqSpec, seed: int, fine_mesh, alpha):
    driver = lift_brownian_stratonovich(seed, spec.driver_dim, fine_mesh, spec.grid, alpha)
    try:
        transform = transform_for_spec(spec, driver)
        ric = riccati_backward(spec, transform)
    except (RiccatiSingularityError, PositivityViolationError, InversionConsistencyError, NumericalBlowupError) as exc:
        raise _DriverFailure(str(exc)) from exc
    return driver, transform, ric


def rough_value(spec: LqSpec, driver: GridRoughPath, n_inner: int, master_seed: int, threads: int = 1) -> EnsembleReport:
    """Monte Carlo value ``V(eta)`` of the optimal feedback for one driver."""
    return cost_monte_carlo(spec, driver, None, n_inner, master_seed, threads)


def pathwise_equivalence(spec: LqSpec, n_outer: int, n_inner: int, master_seed: int, fine_mesh: float | None = None,
                         n_joint: int | None = None, threads: int = 1, alpha: float = 0.45,
                         threshold_se: float = 2.0) -> EquivalenceReport:
    """Nested estimate of ``E_B[V(B)]`` against a joint estimate over ``(B, W)`` pairs.

    The nested leg shares its inner Brownian samples across drivers, so its
    standard error combines the spread of driver means and of noise means.
    The joint leg draws ``n_joint`` fresh independent pairs (default
    ``10 * n_outer``) and uses each driver's own optimal feedback.  Drivers
    whose transform or Riccati solve fails are dropped from both legs.
    """
    if not spec.in_closed_form_scope:
        raise ParameterError("pathwise equivalence needs the closed-form LQ scope")
    if n_outer < 2 or n_inner < 2:
        raise ParameterError("need at least two outer and two inner samples")
    n_joint = 10 * n_outer if n_joint is None else int(n_joint)
    grid = spec.grid
    inner_seeds = sample_seeds(master_seed, W_STREAM, n_inner)
    inner_dW = brownian_block(inner_seeds, grid.dt)

    def outer(block):
        rows = []
        for s in block:
            try:
                _, tr, ric = _driver_solution(spec, s, fine_mesh, alpha)
            except _DriverFailure:
                rows.append(np.full(n_inner, np.nan))
                continue
            rows.append(closed_loop_batch(spec, tr, inner_dW, None, ric).cost)
        return np.array(rows)

    C = np.concatenate(map_chunks(outer, sample_seeds(master_seed, B_STREAM, n_outer), threads, chunk=8))
    ok = np.all(np.isfinite(C), axis=1)
    Cg = C[ok]
    if Cg.shape[0] < 2:
        raise EnsembleFailureError("fewer than two drivers succeeded")
    values = np.array([fsum_mean(r) for r in Cg])
    col_means = np.array([fsum_mean(c) for c in Cg.T])
    nested = fsum_mean(values)
    nested_se = math.sqrt(fsum_stderr(values) ** 2 + fsum_stderr(col_means) ** 2)

    jb = sample_seeds(master_seed, JOINT_B_STREAM, n_joint)
    jw = sample_seeds(master_seed, JOINT_W_STREAM, n_joint)

    def joint(block):
        out = []
        for i in block:
            try:
                _, tr, ric = _driver_solution(spec, jb[i], fine_mesh, alpha)
            except _DriverFailure:
                out.append(np.nan)
                continue
            dW = brownian_increments(jw[i], grid.dt, 1)[None]
            out.append(float(closed_loop_batch(spec, tr, dW, None, ric).cost[0]))
        return np.array(out)

    J = np.concatenate(map_chunks(joint, list(range(n_joint)), threads, chunk=50))
    Jg = J[np.isfinite(J)]
    if Jg.size < 2:
        raise EnsembleFailureError("fewer than two joint samples succeeded")
    joint_mean, joint_se = fsum_mean(Jg), fsum_stderr(Jg)
    comb = math.hypot(nested_se, joint_se)
    diff = nested - joint_mean
    var = math.fsum(((values - nested) ** 2).tolist()) / (values.size - 1)
    q = np.quantile(values, [0.0, 0.05, 0.5, 0.95, 1.0])
    quant = {"min": q[0], "q05": q[1], "median": q[2], "q95": q[3], "max": q[4]}
    passed = abs(diff) <= threshold_se * comb
    return EquivalenceReport(nested, nested_se, joint_mean, joint_se, diff, comb, bool(passed), tuple(values),
                             var, quant, int(ok.sum()), n_inner, int(Jg.size), int((~ok).sum()),
                             int(n_joint - Jg.size))


# -- Ito-Lyons continuity ------------------------------------------------------


@dataclass(frozen=True)
class ContinuityReport:
    distances: tuple
    gaps: tuple
    monotone: bool
    distances_decreasing: bool
    slack: float
    alpha: float


def subsampled_drivers(reference: GridRoughPath, steps: Sequence[int], alpha: float | None = None) -> list[GridRoughPath]:
    """Piecewise-linear lifts through every ``step``-th node of ``reference``, on its grid.

    The reference itself is appended last, as :func:`ito_lyons_convergence` expects.
    """
    grid = reference.grid
    alpha = reference.alpha if alpha is None else alpha
    out = []
    for step in steps:
        if step < 1 or grid.n % step:
            raise ParameterError(f"step {step} does not divide {grid.n} intervals")
        idx = np.arange(0, grid.n + 1, step)
        vals = np.stack([np.interp(grid.times, grid.times[idx], reference.values[idx, a])
                         for a in range(reference.dim)], axis=1)
        out.append(lift_piecewise_linear(vals, grid, alpha))
    return out + [reference]


def _solve_on(system, driver, x0, control, dW):
    return solve_batch(system, driver, x0, control, dW[None])[0][0]


def ito_lyons_convergence(system: AffineRoughSystem, drivers: Sequence[GridRoughPath], x0, control=None,
                          seed: int = 0, slack: float = 0.1, alpha: float | None = None) -> ContinuityReport:
    """Rough distance to the last driver against the sup-node solution gap, same Brownian increments.

    ``monotone`` holds when every gap is at most ``1 + slack`` times the
    previous one.  The distance uses ``alpha`` (default: the reference's).
    """
    if len(drivers) < 2:
        raise ParameterError("need at least one driver plus the reference")
    ref = drivers[-1]
    for d in drivers:
        if d.grid != ref.grid:
            raise DimensionError("all drivers must share the grid")
    dW = brownian_increments(seed, ref.grid.dt, system.dim_w)
    x_ref = _solve_on(system, ref, x0, control, dW)
    dists, gaps = [], []
    for d in drivers[:-1]:
        dists.append(holder_distance(d, ref, alpha).total)
        gaps.append(float(np.max(np.abs(_solve_on(system, d, x0, control, dW) - x_ref))))
    monotone = all(b <= (1 + slack) * a for a, b in zip(gaps, gaps[1:]))
    decreasing = all(b < a for a, b in zip(dists, dists[1:]))
    return ContinuityReport(tuple(dists), tuple(gaps), bool(monotone), bool(decreasing), slack,
                            ref.alpha if alpha is None else float(alpha))


@dataclass(frozen=True)
class LinearResponseReport:
    eps: tuple
    gaps: tuple
    ratios: tuple


def linear_response(system: AffineRoughSystem, driver: GridRoughPath, h_values, eps_values: Sequence[float], x0,
                    control=None, seed: int = 0) -> LinearResponseReport:
    """Solution gaps for translated drivers ``eta + eps h``; ratios of consecutive gaps."""
    dW = brownian_increments(seed, driver.grid.dt, system.dim_w)
    base = _solve_on(system, driver, x0, control, dW)
    gaps = []
    for eps in eps_values:
        x = _solve_on(system, driver.translated(h_values, eps), x0, control, dW)
        gaps.append(float(np.max(np.abs(x - base))))
    ratios = tuple(b / a if a > 0 else math.nan for a, b in zip(gaps, gaps[1:]))
    return LinearResponseReport(tuple(float(e) for e in eps_values), tuple(gaps), ratios)


# -- CSV -----------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def rows_to_csv(header: Sequence[str], rows) -> str:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(_cell(v) for v in row) + "\n")
    return out.getvalue()
