"""Affine rough SDE ``dX = b dt + sigma dW + (F X + f) d eta``.

Coefficient layout on a grid with ``N`` nodes, state dimension ``dx`` and
driver dimension ``d``:

* ``F``: ``(N, dx, dx, d)``; column ``b`` of ``F X`` is ``F[n, :, :, b] @ X``.
* ``Fprime``: ``(N, d, dx, dx, d)``; ``Fprime[n, a]`` is the Gubinelli
  derivative of ``F`` in direction ``a``.
* ``f``: ``(N, dx, d)`` and ``fprime``: ``(N, d, dx, d)``.

Callbacks ``b(t, x, u)`` and ``sigma(t, x, u)`` receive batched states of
shape ``(S, dx)`` and must return ``(S, dx)`` and ``(S, dx, dw)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DimensionError, NodeIndexError, NumericalBlowupError, ParameterError
from .rough_path import GridRoughPath, TimeGrid
from .seeding import brownian_increments

Callback = Callable[[float, np.ndarray, object], np.ndarray]
Control = Callable[[float, np.ndarray], object]


def _zero_drift(t, x, u):
    return np.zeros_like(x)


def _coef(value, shape: tuple, name: str) -> np.ndarray:
    arr = np.asarray(0.0 if value is None else value, dtype=float)
    try:
        arr = np.broadcast_to(arr, shape)
    except ValueError:
        raise DimensionError(f"{name} has shape {arr.shape}, cannot broadcast to {shape}") from None
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AffineRoughSystem:
    grid: TimeGrid
    dim_x: int
    dim_w: int
    dim_eta: int
    b: Callback = _zero_drift
    sigma: Callback | None = None
    F: np.ndarray | float | None = None
    Fprime: np.ndarray | float | None = None
    f: np.ndarray | float | None = None
    fprime: np.ndarray | float | None = None

    def __post_init__(self):
        n, dx, d = len(self.grid), self.dim_x, self.dim_eta
        F = _coef(self.F, (n, dx, dx, d), "F")
        if not np.all(np.isfinite(F)):
            raise ParameterError("F must be finite on the grid")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Fprime", _coef(self.Fprime, (n, d, dx, dx, d), "Fprime"))
        object.__setattr__(self, "f", _coef(self.f, (n, dx, d), "f"))
        object.__setattr__(self, "fprime", _coef(self.fprime, (n, d, dx, d), "fprime"))
        if self.sigma is None:
            dw = self.dim_w
            object.__setattr__(self, "sigma", lambda t, x, u: np.zeros(x.shape + (dw,)))

    @classmethod
    def scalar(cls, grid, b=None, sigma=None, F=0.0, f=0.0, Fprime=0.0, fprime=0.0) -> "AffineRoughSystem":
        """One-dimensional state, Brownian motion and driver; coefficients may be
        constants or per-node arrays."""
        n = len(grid)

        def col(v, extra):
            return np.broadcast_to(np.asarray(v, dtype=float), (n,)).reshape((n,) + extra)

        return cls(
            grid, 1, 1, 1,
            b=b or _zero_drift,
            sigma=sigma,
            F=col(F, (1, 1, 1)),
            Fprime=col(Fprime, (1, 1, 1, 1)),
            f=col(f, (1, 1)),
            fprime=col(fprime, (1, 1, 1)),
        )

    def restrict(self, indices) -> "AffineRoughSystem":
        idx = np.asarray(indices, dtype=int)
        return replace(
            self,
            grid=TimeGrid(self.grid.times[idx]),
            F=self.F[idx], Fprime=self.Fprime[idx], f=self.f[idx], fprime=self.fprime[idx],
        )

    def gubinelli(self, k: int, x: np.ndarray) -> np.ndarray:
        """``F x + f`` at node k, shape (..., dx, d)."""
        return np.einsum("ijb,...j->...ib", self.F[k], x) + self.f[k]

    def second_order(self, k: int, x: np.ndarray, xprime: np.ndarray) -> np.ndarray:
        """``F' x + F (F x + f) + f'`` at node k, shape (..., d, dx, d)."""
        return (
            np.einsum("aijb,...j->...aib", self.Fprime[k], x)
            + np.einsum("ijb,...ja->...aib", self.F[k], xprime)
            + self.fprime[k]
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    x: np.ndarray
    zprime: np.ndarray
    w_increments: np.ndarray
    control: np.ndarray | None = None


def _check_driver(system: AffineRoughSystem, driver: GridRoughPath) -> None:
    if system.grid != driver.grid:
        raise DimensionError("system coefficients and driver live on different grids")
    if driver.dim != system.dim_eta:
        raise DimensionError(f"driver dimension {driver.dim} != {system.dim_eta}")


def davie_step(system: AffineRoughSystem, driver: GridRoughPath, k: int, x, u, dW) -> np.ndarray:
    """One explicit second-order step over interval ``k``.

    ``x + b dt + sigma dW + (F x + f) deta + (F' x + F(F x + f) + f') eta2``.
    Accepts a single state ``(dx,)`` or a batch ``(S, dx)``.
    """
    if not 0 <= k < driver.grid.n:
        raise NodeIndexError(f"interval {k} out of range")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    dWb = np.asarray(dW, dtype=float).reshape(xb.shape[0] if not single else 1, system.dim_w)
    t = float(driver.grid.times[k])
    dt = float(driver.grid.dt[k])
    xp = system.gubinelli(k, xb)
    xpp = system.second_order(k, xb, xp)
    drift = np.asarray(system.b(t, xb, u), dtype=float).reshape(xb.shape)
    diff = np.asarray(system.sigma(t, xb, u), dtype=float).reshape(xb.shape + (system.dim_w,))
    out = (
        xb
        + drift * dt
        + np.einsum("siw,sw->si", diff, dWb)
        + np.einsum("sib,b->si", xp, driver.increments[k])
        + np.einsum("saib,ab->si", xpp, driver.level2[k])
    )
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError(k)
    return out[0] if single else out


def _eval_control(control: Control | None, t: float, x: np.ndarray):
    if control is None:
        return None
    return control(t, x)


def solve_batch(
    system: AffineRoughSystem,
    driver: GridRoughPath,
    x0,
    control: Control | None,
    dW: np.ndarray,
    flag_blowups: bool = False,
):
    """Integrate a batch of samples sharing one driver.

    ``dW`` has shape ``(S, n, dw)``.  Returns ``(x, u, failed)`` with ``x`` of
    shape ``(S, N, dx)``, ``u`` the list of applied controls per node (or
    ``None``) and ``failed`` a boolean mask.  Without ``flag_blowups`` the
    first non-finite state raises :class:`NumericalBlowupError`.
    """
    _check_driver(system, driver)
    dW = np.asarray(dW, dtype=float)
    S = dW.shape[0]
    if dW.shape[1:] != (driver.grid.n, system.dim_w):
        raise DimensionError(f"dW has shape {dW.shape}")
    x = np.empty((S, len(driver.grid), system.dim_x))
    x[:, 0] = np.broadcast_to(np.asarray(x0, dtype=float), (S, system.dim_x))
    if not np.all(np.isfinite(x[:, 0])):
        raise ParameterError("initial state must be finite")
    failed = np.zeros(S, dtype=bool)
    controls = [] if control is not None else None
    times = driver.grid.times
    for k in range(driver.grid.n):
        u = _eval_control(control, float(times[k]), x[:, k])
        if controls is not None:
            controls.append(u)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                x[:, k + 1] = davie_step(system, driver, k, x[:, k], u, dW[:, k])
        except NumericalBlowupError:
            if not flag_blowups:
                raise
            with np.errstate(over="ignore", invalid="ignore"):
                nxt = _unguarded_step(system, driver, k, x[:, k], u, dW[:, k])
            bad = ~np.all(np.isfinite(nxt), axis=1)
            failed |= bad
            nxt[bad] = 0.0
            x[:, k + 1] = nxt
    if controls is not None:
        controls.append(_eval_control(control, float(times[-1]), x[:, -1]))
    x[failed] = np.nan
    return x, controls, failed


def _unguarded_step(system, driver, k, x, u, dW):
    t = float(driver.grid.times[k])
    dt = float(driver.grid.dt[k])
    xp = system.gubinelli(k, x)
    xpp = system.second_order(k, x, xp)
    drift = np.asarray(system.b(t, x, u), dtype=float).reshape(x.shape)
    diff = np.asarray(system.sigma(t, x, u), dtype=float).reshape(x.shape + (system.dim_w,))
    return (
        x + drift * dt + np.einsum("siw,sw->si", diff, dW)
        + np.einsum("sib,b->si", xp, driver.increments[k])
        + np.einsum("saib,ab->si", xpp, driver.level2[k])
    )


def _stack_controls(controls, n_nodes: int):
    if controls is None or controls[0] is None:
        return None
    return np.stack([np.asarray(c, dtype=float) for c in controls], axis=1)


def solve_sample(
    system: AffineRoughSystem,
    driver: GridRoughPath,
    x0,
    control: Control | None = None,
    seed: int = 0,
    dW: np.ndarray | None = None,
) -> Trajectory:
    """Solve one sample path; Brownian increments come from ``seed`` unless ``dW`` is given."""
    if dW is None:
        dW = brownian_increments(seed, driver.grid.dt, system.dim_w)
    dW = np.asarray(dW, dtype=float).reshape(driver.grid.n, system.dim_w)
    x, controls, _ = solve_batch(system, driver, np.asarray(x0, dtype=float).reshape(-1), control, dW[None])
    u = _stack_controls(controls, len(driver.grid))
    xs = x[0]
    zp = np.stack([system.gubinelli(k, xs[k]) for k in range(len(driver.grid))])
    return Trajectory(driver.grid, xs, zp, dW, None if u is None else u[0])


# -- deterministic linear RDE ------------------------------------------------


def _augmented_generators(F, Fprime, f, fprime):
    """Generators of the homogeneous system for ``(x, 1)``."""
    n, dx, _, d = F.shape
    M = np.zeros((n, d, dx + 1, dx + 1))
    M[:, :, :dx, :dx] = np.moveaxis(F, 3, 1)
    M[:, :, :dx, dx] = np.moveaxis(f, 2, 1)
    Mp = np.zeros((n, d, d, dx + 1, dx + 1))
    Mp[:, :, :, :dx, :dx] = np.moveaxis(Fprime, 4, 2)
    Mp[:, :, :, :dx, dx] = np.moveaxis(fprime, 3, 2)
    return M, Mp


def log_ode_generators(F, Fprime, f, fprime, driver: GridRoughPath) -> np.ndarray:
    """Per-interval exponents ``Omega_k`` of the second-order log-ODE step."""
    M, Mp = _augmented_generators(F, Fprime, f, fprime)
    M, Mp = M[:-1], Mp[:-1]
    inc, l2 = driver.increments, driver.level2
    first = np.einsum("nbij,nb->nij", M, inc)
    # (M'_{ab} + M_b M_a) eta2_{ab} - (sum_a M_a deta_a)^2 / 2
    second = np.einsum("nabij,nab->nij", Mp, l2) + np.einsum("nbik,nakj,nab->nij", M, M, l2)
    return first + second - 0.5 * first @ first


def solve_linear_rde(Fpath, Fprime, f, fprime, driver: GridRoughPath, x0) -> Trajectory:
    """Deterministic linear RDE ``dX = (F X + f) d eta`` by exponential steps.

    The step ``exp(Omega_k)`` agrees with :func:`davie_step` up to second
    order and is exact for constant commuting ``F``.  ``x0`` may be a vector
    ``(dx,)`` or a matrix ``(dx, m)`` whose columns are propagated together
    (the forcing acts on every column).
    """
    F = np.asarray(Fpath, dtype=float)
    n_nodes = len(driver.grid)
    if F.ndim != 4 or F.shape[0] != n_nodes or F.shape[3] != driver.dim:
        raise DimensionError(f"F has shape {F.shape}")
    dx, d = F.shape[1], F.shape[3]
    Fp = _coef(Fprime, (n_nodes, d, dx, dx, d), "Fprime")
    fv = _coef(f, (n_nodes, dx, d), "f")
    fp = _coef(fprime, (n_nodes, d, dx, d), "fprime")
    x0 = np.asarray(x0, dtype=float)
    vector = x0.ndim == 1
    X0 = x0[:, None] if vector else x0
    if X0.shape[0] != dx:
        raise DimensionError(f"x0 has {X0.shape[0]} rows, expected {dx}")
    omega = log_ode_generators(F, Fp, fv, fp, driver)
    steps = expm(omega) if omega.shape[0] else omega
    y = np.empty((n_nodes, dx + 1, X0.shape[1]))
    y[0, :dx] = X0
    y[0, dx] = 1.0
    for k in range(driver.grid.n):
        y[k + 1] = steps[k] @ y[k]
        if not np.all(np.isfinite(y[k + 1])):
            raise NumericalBlowupError(k)
    xs = y[:, :dx]
    zp = np.einsum("nijb,njm->nimb", F, xs) + fv[:, :, None, :]
    if vector:
        xs, zp = xs[:, :, 0], zp[:, :, 0, :]
    return Trajectory(driver.grid, xs, zp, np.zeros((driver.grid.n, 0)))


# -- self-convergence --------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    meshes: tuple
    errors: tuple
    order: float
    exact: bool


def self_convergence_order(
    system: AffineRoughSystem,
    driver_fine: GridRoughPath,
    x0,
    control: Control | None,
    seed: int,
    meshes: Sequence[float],
) -> ConvergenceReport:
    """Empirical order from sup-node errors against the fine-grid solution.

    Coarse solves reuse the fine Brownian increments aggregated per coarse
    interval and the Chen-coarsened driver.  ``order`` is the mean of
    ``log2(e_h / e_{h/2})``; if every error is exactly zero, ``exact`` is set
    and ``order`` is ``inf``.
    """
    if len(meshes) < 3:
        raise ParameterError("need at least three meshes")
    meshes = sorted(meshes, reverse=True)
    fine = solve_sample(system, driver_fine, x0, control, seed)
    errors = []
    for h in meshes:
        coarse = TimeGrid.from_mesh(driver_fine.grid.T, h)
        idx = driver_fine.grid.indices_of(coarse)
        dW = np.add.reduceat(fine.w_increments, idx[:-1], axis=0)
        sub = solve_sample(system.restrict(idx), driver_fine.restrict(idx), x0, control, dW=dW)
        errors.append(float(np.max(np.abs(sub.x - fine.x[idx]))))
    if all(e == 0.0 for e in errors):
        return ConvergenceReport(tuple(meshes), tuple(errors), math.inf, True)
    ratios = [
        math.log(errors[i] / errors[i + 1]) / math.log(meshes[i] / meshes[i + 1])
        for i in range(len(errors) - 1)
    ]
    return ConvergenceReport(tuple(meshes), tuple(errors), float(np.mean(ratios)), False)


# -- serialization -----------------------------------------------------------


def trajectory_rows(traj: Trajectory, sample_id: int | None = None, with_control: bool = True):
    dx = traj.x.shape[1]
    header = (["sample"] if sample_id is not None else []) + ["t"] + [f"x_{i + 1}" for i in range(dx)]
    u = traj.control if with_control else None
    if u is not None:
        u = np.asarray(u).reshape(len(traj.grid), -1)
        header += [f"u_{j + 1}" for j in range(u.shape[1])]
    rows = []
    for k, t in enumerate(traj.grid.times):
        row = ([sample_id] if sample_id is not None else []) + [float(t)] + [float(v) for v in traj.x[k]]
        if u is not None:
            row += [float(v) for v in u[k]]
        rows.append(row)
    return header, rows


def trajectories_to_csv(trajs: Sequence[Trajectory], long_format: bool = True, with_control: bool = True) -> str:
    out = io.StringIO()
    header_written = False
    for i, tr in enumerate(trajs):
        header, rows = trajectory_rows(tr, i if long_format else None, with_control)
        if not header_written:
            out.write(",".join(header) + "\n")
            header_written = True
        for row in rows:
            out.write(",".join(str(v) if isinstance(v, int) else repr(v) for v in row) + "\n")
    return out.getvalue()
