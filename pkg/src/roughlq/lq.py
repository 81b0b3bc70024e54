"""Scalar rough linear-quadratic control.

State ``dX = (A~ X + B~ u + b~) dt + (C~ X + D~ u + s~) dW + (F X + f) d eta``
with cost ``E[int 1/2 (M~ X^2 + N~ u^2) dt + G~ X_T^2]``.  In transformed
coordinates ``X = A X~ + zeta`` the rough term disappears and, in the
closed-form scope, the adjoint is ``Y~ = P X~ + q`` with ``(P, q)`` solving a
backward Riccati pair.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .doss_sussmann import TransformData, build_transform
from .errors import (
    ConfigError,
    DimensionError,
    NodeIndexError,
    ParameterError,
    PositivityViolationError,
    RiccatiSingularityError,
    ScopeError,
)
from .rough_path import GridRoughPath, TimeGrid
from .rsde import AffineRoughSystem
from .seeding import brownian_increments

N_MIN = 1e-8
POSITIVITY_SLACK = 1e-10
TIME_FUNCTIONS = ("Atil", "Btil", "Ctil", "Dtil", "btil", "sigtil", "Mtil", "Ntil")


def _on_grid(value, grid: TimeGrid, name: str, trailing: tuple = ()) -> np.ndarray:
    """Constant, per-node array or callable of ``t`` evaluated on the grid."""
    n = len(grid)
    if callable(value):
        value = [value(float(t)) for t in grid.times]
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 or arr.shape == trailing:
        arr = np.broadcast_to(arr, (n,) + trailing)
    elif arr.shape[0] == n and arr.size == n * math.prod(trailing):
        arr = arr.reshape((n,) + trailing)
    else:
        raise DimensionError(f"{name} has shape {arr.shape}, expected {(n,) + trailing} or a constant")
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LqSpec:
    """Scalar LQ data on a grid; rough coefficients have driver dimension ``d``.

    ``F`` and ``f`` have shape ``(N, d)``, ``Fprime`` and ``fprime``
    ``(N, d, d)``.
    """

    grid: TimeGrid
    Atil: np.ndarray
    Btil: np.ndarray
    Ctil: np.ndarray
    Dtil: np.ndarray
    btil: np.ndarray
    sigtil: np.ndarray
    Mtil: np.ndarray
    Ntil: np.ndarray
    Gtil: float
    F: np.ndarray
    Fprime: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    x0: float
    n_min: float = N_MIN
    control_bounds: tuple | None = None

    def __post_init__(self):
        if not self.n_min > 0:
            raise ParameterError("n_min must be positive")
        if np.any(self.Ntil < self.n_min):
            raise ParameterError(f"Ntil must stay above n_min={self.n_min}")
        if np.any(self.Mtil < 0) or self.Gtil < 0:
            raise ParameterError("cost weights Mtil and Gtil must be nonnegative")
        if not math.isfinite(self.x0):
            raise ParameterError("x0 must be finite")
        if self.control_bounds is not None:
            lo, hi = (float(v) for v in self.control_bounds)
            if not lo < hi:
                raise ParameterError(f"control bounds {self.control_bounds} are empty")
            object.__setattr__(self, "control_bounds", (lo, hi))

    @classmethod
    def build(cls, grid: TimeGrid, *, x0: float, Gtil: float = 0.0, driver_dim: int = 1, n_min: float = N_MIN,
              control_bounds=None, **coefficients) -> "LqSpec":
        """Accept each coefficient as a constant, a per-node array or a function of ``t``.

        Time functions default to 0 except ``Btil`` and ``Ntil`` (default 1).
        """
        unknown = set(coefficients) - set(TIME_FUNCTIONS) - {"F", "Fprime", "f", "fprime"}
        if unknown:
            raise ParameterError(f"unknown coefficients: {sorted(unknown)}")
        defaults = {"Btil": 1.0, "Ntil": 1.0}
        d = int(driver_dim)
        if d < 1:
            raise ParameterError("driver dimension must be at least 1")
        kw = {name: _on_grid(coefficients.get(name, defaults.get(name, 0.0)), grid, name) for name in TIME_FUNCTIONS}
        kw["F"] = _on_grid(coefficients.get("F", 0.0), grid, "F", (d,))
        kw["f"] = _on_grid(coefficients.get("f", 0.0), grid, "f", (d,))
        kw["Fprime"] = _on_grid(coefficients.get("Fprime", 0.0), grid, "Fprime", (d, d))
        kw["fprime"] = _on_grid(coefficients.get("fprime", 0.0), grid, "fprime", (d, d))
        return cls(grid, Gtil=float(Gtil), x0=float(x0), n_min=float(n_min), control_bounds=control_bounds, **kw)

    @property
    def T(self) -> float:
        return self.grid.T

    @property
    def driver_dim(self) -> int:
        return self.F.shape[1]

    @property
    def in_closed_form_scope(self) -> bool:
        zero = all(not np.any(getattr(self, name)) for name in ("Atil", "Ctil", "btil", "sigtil", "Fprime", "fprime"))
        return zero and bool(np.all(np.isfinite(self.F)) and np.all(np.isfinite(self.f)))

    def rough_layout(self):
        """``(F, Fprime, f, fprime)`` in the :class:`AffineRoughSystem` layout."""
        n, d = len(self.grid), self.driver_dim
        return (
            self.F.reshape(n, 1, 1, d),
            self.Fprime.reshape(n, d, 1, 1, d),
            self.f.reshape(n, 1, d),
            self.fprime.reshape(n, d, 1, d),
        )


def transform_for_spec(spec: LqSpec, driver: GridRoughPath, tol: float = 1e-6) -> TransformData:
    if driver.grid != spec.grid:
        raise DimensionError("driver and spec live on different grids")
    return build_transform(*spec.rough_layout(), driver, tol)


def original_system(spec: LqSpec) -> AffineRoughSystem:
    """The controlled rough SDE in original coordinates (controls are scalars per sample)."""
    grid = spec.grid

    def b(t, x, u):
        k = grid.node_of(t)
        u = 0.0 if u is None else np.asarray(u, dtype=float).reshape(x.shape[0], 1)
        return spec.Atil[k] * x + spec.Btil[k] * u + spec.btil[k]

    def sigma(t, x, u):
        k = grid.node_of(t)
        u = 0.0 if u is None else np.asarray(u, dtype=float).reshape(x.shape[0], 1)
        return (spec.Ctil[k] * x + spec.Dtil[k] * u + spec.sigtil[k])[..., None]

    F, Fp, f, fp = spec.rough_layout()
    return AffineRoughSystem(grid, 1, 1, spec.driver_dim, b=b, sigma=sigma, F=F, Fprime=Fp, f=f, fprime=fp)


# -- hats and Riccati ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HatCoefficients:
    hatB: np.ndarray
    hatD: np.ndarray
    hatM: np.ndarray
    hatG: float


def _scalar_transform(spec: LqSpec, transform: TransformData):
    if transform.grid != spec.grid:
        raise DimensionError("transform and spec live on different grids")
    if transform.dim != 1:
        raise DimensionError("LQ transform must be scalar")
    return transform.A[:, 0, 0], transform.Ainv[:, 0, 0], transform.zeta[:, 0]


def hat_coefficients(spec: LqSpec, transform: TransformData) -> HatCoefficients:
    A, Ainv, _ = _scalar_transform(spec, transform)
    return HatCoefficients(Ainv * spec.Btil, Ainv * spec.Dtil, A * spec.Mtil, float(A[-1] * spec.Gtil))


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Backward pair ``(P, q)``; ``r`` is the constant term of the value ``P x^2 / 2 + q x + r``."""

    grid: TimeGrid
    P: np.ndarray
    q: np.ndarray
    r: np.ndarray
    hatB: np.ndarray
    hatD: np.ndarray
    hatM: np.ndarray
    hatG: float
    Ntil: np.ndarray
    A: np.ndarray
    zeta: np.ndarray
    denom_min: float
    control_bounds: tuple | None = None

    @property
    def denom(self) -> np.ndarray:
        return self.Ntil + self.hatD**2 * self.P

    def value(self, xt0: float) -> float:
        """Closed-form optimal cost from transformed initial state ``xt0``."""
        return float(0.5 * self.P[0] * xt0**2 + self.q[0] * xt0 + self.r[0])


def _riccati_rhs(t, y, c, n_min):
    P, q, _ = y
    hB2, hD2, N, MA2, Mz, Mz2 = c
    den = N + hD2 * P
    if not den > n_min:
        raise RiccatiSingularityError(t, den)
    return np.array([
        hB2 * P * P / den - MA2,
        P * hB2 * q / den - Mz,
        0.5 * hB2 * q * q / den - 0.5 * Mz2,
    ])


def _riccati_substeps(dt, P, c0, c1, limit=0.5, cap=4096):
    """RK4 substeps per interval so that ``dt * |df/dP|`` stays below ``limit``.

    Only stiff intervals (large ``P hatB^2 / den``) are split; otherwise 1.
    """
    P = abs(float(P))
    lip = 0.0
    for hB2, hD2, N, *_ in (c0, c1):
        den = N + hD2 * P
        if den > 0:
            lip = max(lip, 2.0 * hB2 * P / den)
    return int(min(cap, max(1, math.ceil(dt * lip / limit))))


def riccati_backward(spec: LqSpec, transform: TransformData) -> RiccatiSolution:
    """Classical RK4 backward from ``T`` on the spec grid.

    Between nodes the coefficients are interpolated linearly, which keeps the
    central-difference residual at second order in the mesh.  ``P``, ``q`` and
    the value offset ``r`` are stepped together.  Stiff intervals are split
    into equal substeps (see :func:`_riccati_substeps`).
    """
    if not spec.in_closed_form_scope:
        raise ScopeError("closed-form Riccati needs Atil=Ctil=btil=sigtil=0 and Fprime=fprime=0")
    A, _, zeta = _scalar_transform(spec, transform)
    hats = hat_coefficients(spec, transform)
    coef = np.stack([
        hats.hatB**2, hats.hatD**2, spec.Ntil, hats.hatM * A, hats.hatM * zeta, spec.Mtil * zeta**2,
    ])
    times = spec.grid.times
    n = spec.grid.n
    y = np.empty((n + 1, 3))
    y[n] = [2.0 * hats.hatG * A[-1], 2.0 * hats.hatG * zeta[-1], spec.Gtil * zeta[-1] ** 2]
    n_min = spec.n_min
    for k in range(n - 1, -1, -1):
        c1, c0 = coef[:, k + 1], coef[:, k]
        m = _riccati_substeps(times[k + 1] - times[k], y[k + 1, 0], c0, c1)
        cur = y[k + 1]
        # substep nodes walking backward from t_{k+1}; end points use the node values
        sub = [(times[k + 1], c1)]
        sub += [(times[k + 1] + (times[k] - times[k + 1]) * s / m, c1 + (c0 - c1) * s / m) for s in range(1, m)]
        sub.append((times[k], c0))
        for s in range(m):
            (t1, ca), (t0, cb) = sub[s], sub[s + 1]
            h = t0 - t1
            cm = 0.5 * (ca + cb)
            tm = 0.5 * (t0 + t1)
            k1 = _riccati_rhs(t1, cur, ca, n_min)
            k2 = _riccati_rhs(tm, cur + 0.5 * h * k1, cm, n_min)
            k3 = _riccati_rhs(tm, cur + 0.5 * h * k2, cm, n_min)
            k4 = _riccati_rhs(t0, cur + h * k3, cb, n_min)
            cur = cur + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        y[k] = cur
        if not np.all(np.isfinite(y[k])):
            raise RiccatiSingularityError(float(times[k]), float("nan"))
        if y[k, 0] < -POSITIVITY_SLACK:
            raise PositivityViolationError(float(times[k]), float(y[k, 0]))
    denom = spec.Ntil + hats.hatD**2 * y[:, 0]
    dmin = float(np.min(denom))
    if not dmin > n_min:
        k = int(np.argmin(denom))
        raise RiccatiSingularityError(float(times[k]), dmin)
    return RiccatiSolution(
        spec.grid, y[:, 0], y[:, 1], y[:, 2], hats.hatB, hats.hatD, hats.hatM, hats.hatG,
        np.asarray(spec.Ntil), A, zeta, dmin, spec.control_bounds,
    )


def riccati_residual(ric: RiccatiSolution) -> float:
    """Max over interior nodes of central-difference ``dP/dt`` minus the right-hand side."""
    t, P = ric.grid.times, ric.P
    if P.size < 3:
        return 0.0
    dP = (P[2:] - P[:-2]) / (t[2:] - t[:-2])
    den = ric.Ntil + ric.hatD**2 * P
    rhs = ric.hatB**2 * P**2 / den - ric.hatM * ric.A
    return float(np.max(np.abs(dP - rhs[1:-1])))


def riccati_interval_residual(ric: RiccatiSolution) -> float:
    """Per-interval difference quotient of ``P`` against the trapezoid of the right-hand side.

    Scaled by ``max(1, max |rhs|)``.  Unlike :func:`riccati_residual` this
    stays small when the coefficients are only Hölder in time (rough drivers).
    """
    t, P = ric.grid.times, ric.P
    den = ric.Ntil + ric.hatD**2 * P
    rhs = ric.hatB**2 * P**2 / den - ric.hatM * ric.A
    res = np.diff(P) / np.diff(t) - 0.5 * (rhs[1:] + rhs[:-1])
    return float(np.max(np.abs(res)) / max(1.0, float(np.max(np.abs(rhs)))))


# -- feedback -------------------------------------------------------------------


@dataclass(frozen=True)
class FeedbackValue:
    raw: np.ndarray | float
    value: np.ndarray | float
    saturated: np.ndarray | bool


def _clamp(raw, bounds):
    if bounds is None:
        return raw, np.zeros(np.shape(raw), dtype=bool) if np.ndim(raw) else False
    lo, hi = bounds
    val = np.clip(raw, lo, hi)
    return val, (val != raw) if np.ndim(raw) else bool(val != raw)


def optimal_feedback(ric: RiccatiSolution, k: int, xtilde) -> FeedbackValue:
    """``u* = -(hatB P x~ + hatB q) / (N~ + hatD^2 P)`` at node ``k``."""
    if not 0 <= k < len(ric.grid):
        raise NodeIndexError(f"node {k} out of range")
    raw = -(ric.hatB[k] * ric.P[k] * np.asarray(xtilde, dtype=float) + ric.hatB[k] * ric.q[k]) / ric.denom[k]
    if np.ndim(raw) == 0:
        raw = float(raw)
    value, saturated = _clamp(raw, ric.control_bounds)
    return FeedbackValue(raw, value, saturated)


@dataclass(frozen=True, eq=False)
class AffineFeedback:
    """Transformed-coordinate feedback ``u_k = K_k x~ + kappa_k``."""

    K: np.ndarray
    kappa: np.ndarray
    optimal: bool = False

    def __call__(self, k: int, t: float, xt: np.ndarray) -> np.ndarray:
        return self.K[k] * xt + self.kappa[k]

    def shifted(self, c) -> "AffineFeedback":
        return AffineFeedback(self.K, self.kappa + np.asarray(c, dtype=float))


def optimal_affine_feedback(ric: RiccatiSolution) -> AffineFeedback:
    den = ric.denom
    return AffineFeedback(-ric.hatB * ric.P / den, -ric.hatB * ric.q / den, optimal=True)


# -- closed-loop simulation -----------------------------------------------------


def transformed_drift(spec: LqSpec, transform: TransformData, k: int, xt, u) -> np.ndarray:
    """``A~ x~ + Ainv B~ u + Ainv A~ zeta + Ainv b~`` at node ``k``."""
    A, Ainv, zeta = _scalar_transform(spec, transform)
    return spec.Atil[k] * xt + Ainv[k] * spec.Btil[k] * u + Ainv[k] * spec.Atil[k] * zeta[k] + Ainv[k] * spec.btil[k]


def transformed_diffusion(spec: LqSpec, transform: TransformData, k: int, xt, u) -> np.ndarray:
    """``C~ x~ + Ainv D~ u + Ainv C~ zeta + Ainv s~`` at node ``k``."""
    A, Ainv, zeta = _scalar_transform(spec, transform)
    return spec.Ctil[k] * xt + Ainv[k] * spec.Dtil[k] * u + Ainv[k] * spec.Ctil[k] * zeta[k] + Ainv[k] * spec.sigtil[k]


@dataclass(frozen=True, eq=False)
class ClosedLoopBatch:
    """Arrays of shape ``(S, N)``; costs of shape ``(S,)``."""

    xt: np.ndarray
    x: np.ndarray
    u: np.ndarray
    raw_u: np.ndarray
    saturated: np.ndarray
    running: np.ndarray
    terminal: np.ndarray

    @property
    def cost(self) -> np.ndarray:
        return self.running + self.terminal


def closed_loop_batch(spec: LqSpec, transform: TransformData, dW: np.ndarray, control=None,
                      ric: RiccatiSolution | None = None) -> ClosedLoopBatch:
    """Euler scheme in transformed coordinates for a batch of Brownian paths.

    ``control`` is an :class:`AffineFeedback`, a callable ``(k, t, x~) -> u``,
    an open-loop array broadcastable to ``(S, N)``, or ``None`` for the
    optimal feedback of ``ric``.  Controls are clamped to the spec's bounds.
    Running cost is a left-point sum of ``(M~ X^2 + N~ u^2) / 2``; the
    terminal cost is ``G~ X_T^2``.
    """
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 3:
        dW = dW[..., 0]
    S, n = dW.shape
    grid = spec.grid
    if n != grid.n:
        raise DimensionError(f"dW has {n} intervals, grid has {grid.n}")
    A, Ainv, zeta = _scalar_transform(spec, transform)
    if control is None:
        if ric is None:
            raise ParameterError("optimal control needs a Riccati solution")
        control = optimal_affine_feedback(ric)
    open_loop = None
    if not callable(control):
        open_loop = np.broadcast_to(np.asarray(control, dtype=float), (S, n + 1))
    times, dt = grid.times, grid.dt
    xt = np.empty((S, n + 1))
    raw = np.empty((S, n + 1))
    xt[:, 0] = Ainv[0] * (spec.x0 - zeta[0])
    for k in range(n + 1):
        raw[:, k] = open_loop[:, k] if open_loop is not None else control(k, float(times[k]), xt[:, k])
        if k == n:
            break
        u = _clamp(raw[:, k], spec.control_bounds)[0]
        drift = transformed_drift(spec, transform, k, xt[:, k], u)
        diff = transformed_diffusion(spec, transform, k, xt[:, k], u)
        xt[:, k + 1] = xt[:, k] + drift * dt[k] + diff * dW[:, k]
    u, saturated = _clamp(raw, spec.control_bounds)
    x = A * xt + zeta
    running = 0.5 * np.sum((spec.Mtil[:-1] * x[:, :-1] ** 2 + spec.Ntil[:-1] * u[:, :-1] ** 2) * dt, axis=1)
    terminal = spec.Gtil * x[:, -1] ** 2
    return ClosedLoopBatch(xt, x, u, raw, np.asarray(saturated, dtype=bool), running, terminal)


@dataclass(frozen=True, eq=False)
class ClosedLoopRun:
    x: np.ndarray
    xt: np.ndarray
    u: np.ndarray
    cost: float
    saturated: np.ndarray
    dW: np.ndarray


def simulate_closed_loop(spec: LqSpec, transform: TransformData, ric: RiccatiSolution, driver: GridRoughPath,
                         seed: int, control=None) -> ClosedLoopRun:
    """One closed-loop sample with Brownian increments drawn from ``seed``."""
    if driver.grid != spec.grid:
        raise DimensionError("driver and spec live on different grids")
    dW = brownian_increments(seed, spec.grid.dt, 1)
    run = closed_loop_batch(spec, transform, dW[None], control, ric)
    return ClosedLoopRun(run.x[0], run.xt[0], run.u[0], float(run.cost[0]), run.saturated[0], dW[:, 0])


# -- Hamiltonian and adjoint ----------------------------------------------------


def hamiltonian_eval(spec: LqSpec, transform: TransformData, k: int, x, ytilde, ztilde, u):
    """``N~ u^2/2 + Ainv (B~ y + D~ z) u + Ainv (A~ x y + b~ y + C~ x z + s~ z) + M~ x^2 / 2``."""
    if not 0 <= k < len(spec.grid):
        raise NodeIndexError(f"node {k} out of range")
    _, Ainv, _ = _scalar_transform(spec, transform)
    ai = Ainv[k]
    return (
        0.5 * spec.Ntil[k] * u**2
        + ai * (spec.Btil[k] * ytilde + spec.Dtil[k] * ztilde) * u
        + ai * (spec.Atil[k] * x * ytilde + spec.btil[k] * ytilde + spec.Ctil[k] * x * ztilde + spec.sigtil[k] * ztilde)
        + 0.5 * spec.Mtil[k] * x**2
    )


def hamiltonian_du(spec: LqSpec, transform: TransformData, k: int, ytilde, ztilde, u):
    _, Ainv, _ = _scalar_transform(spec, transform)
    return spec.Ntil[k] * u + Ainv[k] * (spec.Btil[k] * ytilde + spec.Dtil[k] * ztilde)


def adjoint_pair_lq(ric: RiccatiSolution, xtilde, control):
    """Ansatz ``Y~ = P X~ + q`` and ``Z~ = P hatD u`` nodewise (trailing axis is time)."""
    xtilde = np.asarray(xtilde, dtype=float)
    control = np.asarray(control, dtype=float)
    N = len(ric.grid)
    if xtilde.shape[-1] != N or control.shape[-1] != N:
        raise DimensionError("trajectories must have one value per grid node")
    return ric.P * xtilde + ric.q, ric.P * ric.hatD * control


@dataclass(frozen=True, eq=False)
class FeedbackAdjoint:
    """Coefficients of ``Y~ = Pi X~ + pi`` for a general affine feedback."""

    Pi: np.ndarray
    pi: np.ndarray

    def pair(self, ric: RiccatiSolution, xtilde, control):
        return self.Pi * xtilde + self.pi, self.Pi * ric.hatD * control


def feedback_adjoint(ric: RiccatiSolution, feedback: AffineFeedback) -> FeedbackAdjoint:
    """Adjoint coefficients under ``u = K x~ + kappa`` in the closed-form scope.

    ``dPi/dt = -Pi hatB K - hatM A`` and ``dpi/dt = -Pi hatB kappa - hatM zeta``
    with the Riccati terminal values; at the optimal feedback this returns
    ``(P, q)``.  Integrated by RK4 with linearly interpolated coefficients.
    """
    times = ric.grid.times
    n = ric.grid.n
    a = ric.hatB * feedback.K
    c = ric.hatB * feedback.kappa
    m1 = ric.hatM * ric.A
    m2 = ric.hatM * ric.zeta
    y = np.empty((n + 1, 2))
    y[n] = [ric.P[-1], ric.q[-1]]

    def rhs(yy, ai, ci, m1i, m2i):
        return np.array([-yy[0] * ai - m1i, -yy[0] * ci - m2i])

    for k in range(n - 1, -1, -1):
        h = times[k] - times[k + 1]
        mid = [0.5 * (v[k] + v[k + 1]) for v in (a, c, m1, m2)]
        k1 = rhs(y[k + 1], a[k + 1], c[k + 1], m1[k + 1], m2[k + 1])
        k2 = rhs(y[k + 1] + 0.5 * h * k1, *mid)
        k3 = rhs(y[k + 1] + 0.5 * h * k2, *mid)
        k4 = rhs(y[k + 1] + h * k3, a[k], c[k], m1[k], m2[k])
        y[k] = y[k + 1] + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return FeedbackAdjoint(y[:, 0], y[:, 1])


def stationarity_residual(spec: LqSpec, transform: TransformData, ric: RiccatiSolution, run: ClosedLoopBatch) -> float:
    """Max nodewise ``|N~ u* + hatB Y~ + hatD Z~|`` along an optimal closed loop."""
    y, z = adjoint_pair_lq(ric, run.xt, run.u)
    res = ric.Ntil * run.u + ric.hatB * y + ric.hatD * z
    return float(np.max(np.abs(res)))


# -- config and export ----------------------------------------------------------

SPEC_KEYS = set(TIME_FUNCTIONS) | {"Gtil", "F", "Fprime", "f", "fprime", "x0", "driver_dim", "n_min", "control_bounds"}


def lq_spec_from_mapping(data: Mapping, grid: TimeGrid) -> LqSpec:
    """Build an :class:`LqSpec` from config values (constants or per-node lists)."""
    unknown = set(data) - SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown LQ spec keys: {sorted(unknown)}")
    if "x0" not in data:
        raise ConfigError("LQ spec needs x0")
    kw = dict(data)
    bounds = kw.pop("control_bounds", None)
    if bounds is not None and (not isinstance(bounds, (list, tuple)) or len(bounds) != 2):
        raise ConfigError("control_bounds must be a pair [lo, hi]")
    try:
        return LqSpec.build(grid, control_bounds=bounds, **kw)
    except (DimensionError, ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def riccati_to_csv(ric: RiccatiSolution) -> str:
    out = io.StringIO()
    out.write("t,P,q,r,hatB,hatD,hatM,A,zeta,denom\n")
    den = ric.denom
    for k, t in enumerate(ric.grid.times):
        vals = (t, ric.P[k], ric.q[k], ric.r[k], ric.hatB[k], ric.hatD[k], ric.hatM[k], ric.A[k], ric.zeta[k], den[k])
        out.write(",".join(repr(float(v)) for v in vals) + "\n")
    return out.getvalue()


def closed_loop_to_csv(grid: TimeGrid, run: ClosedLoopBatch) -> str:
    out = io.StringIO()
    out.write("sample,t,x,xtilde,u,saturated\n")
    for s in range(run.x.shape[0]):
        for k, t in enumerate(grid.times):
            out.write(f"{s},{float(t)!r},{float(run.x[s, k])!r},{float(run.xt[s, k])!r},"
                      f"{float(run.u[s, k])!r},{int(run.saturated[s, k])}\n")
    return out.getvalue()
