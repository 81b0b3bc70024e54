"""Affine Doss-Sussmann transform ``phi_t(x) = A_t x + zeta_t``.

``A`` solves ``dA = F A d eta`` from the identity, ``A^{-1}`` solves its own
equation ``dA^{-1} = -A^{-1} F d eta`` and ``zeta`` solves
``d zeta = (F zeta + f) d eta`` from zero.  Substituting ``X = phi(X~)``
removes the rough integral from the dynamics.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, InversionConsistencyError, NodeIndexError, ParameterError
from .rough_path import GridRoughPath, TimeGrid
from .rsde import AffineRoughSystem, _coef, solve_batch, solve_linear_rde
from .seeding import brownian_increments

DEFAULT_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class TransformData:
    grid: TimeGrid
    A: np.ndarray
    Ainv: np.ndarray
    zeta: np.ndarray
    product_defect: float
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        n = len(self.grid)
        A = np.asarray(self.A, dtype=float)
        Ainv = np.asarray(self.Ainv, dtype=float)
        zeta = np.asarray(self.zeta, dtype=float)
        if A.ndim != 3 or A.shape[0] != n or A.shape[1] != A.shape[2]:
            raise DimensionError(f"A has shape {A.shape}")
        if Ainv.shape != A.shape or zeta.shape != A.shape[:2]:
            raise DimensionError("A, Ainv and zeta shapes disagree")
        defects = node_defects(A, Ainv)
        worst = int(np.argmax(defects))
        if not defects[worst] <= self.tolerance:
            raise InversionConsistencyError(float(defects[worst]), worst, self.tolerance)
        for name, arr in (("A", A), ("Ainv", Ainv), ("zeta", zeta)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "product_defect", float(defects[worst]))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @classmethod
    def identity(cls, grid: TimeGrid, dim: int = 1) -> "TransformData":
        eye = np.broadcast_to(np.eye(dim), (len(grid), dim, dim))
        return cls(grid, eye, eye, np.zeros((len(grid), dim)), 0.0)


def node_defects(A: np.ndarray, Ainv: np.ndarray) -> np.ndarray:
    """Frobenius norm of ``Ainv_k A_k - I`` per node."""
    eye = np.eye(A.shape[1])
    return np.linalg.norm(Ainv @ A - eye, axis=(1, 2))


def build_transform(F, Fprime, f, fprime, driver: GridRoughPath, tol: float = DEFAULT_TOLERANCE) -> TransformData:
    """Solve the three linear RDEs for ``A``, ``A^{-1}`` and ``zeta``.

    ``F`` has the layout ``(N, dx, dx, d)`` of :class:`AffineRoughSystem`.
    ``A^{-1}`` is computed from its own equation (transposed, so that it is a
    left-acting linear RDE with generators ``-F_b^T``), not by inverting ``A``.
    """
    F = np.asarray(F, dtype=float)
    n = len(driver.grid)
    if F.ndim != 4 or F.shape[0] != n or F.shape[1] != F.shape[2] or F.shape[3] != driver.dim:
        raise DimensionError(f"F has shape {F.shape}, driver has {n} nodes and dimension {driver.dim}")
    dx, d = F.shape[1], F.shape[3]
    Fp = _coef(Fprime, (n, d, dx, dx, d), "Fprime")
    fv = _coef(f, (n, dx, d), "f")
    fp = _coef(fprime, (n, d, dx, d), "fprime")
    eye = np.eye(dx)
    A = solve_linear_rde(F, Fp, 0.0, 0.0, driver, eye).x
    G = -np.swapaxes(F, 1, 2)
    Gp = -np.swapaxes(Fp, 2, 3)
    Ainv = np.swapaxes(solve_linear_rde(G, Gp, 0.0, 0.0, driver, eye).x, 1, 2)
    zeta = solve_linear_rde(F, Fp, fv, fp, driver, np.zeros(dx)).x
    return TransformData(driver.grid, A, Ainv, zeta, 0.0, tol)


def transform_for_system(system: AffineRoughSystem, driver: GridRoughPath, tol: float = DEFAULT_TOLERANCE) -> TransformData:
    return build_transform(system.F, system.Fprime, system.f, system.fprime, driver, tol)


def phi_map(transform: TransformData, k: int, x, direction: str = "forward") -> np.ndarray:
    """``A_k x + zeta_k`` (forward) or ``Ainv_k (x - zeta_k)`` (inverse); ``x`` may be batched."""
    if not 0 <= k < len(transform.grid):
        raise NodeIndexError(f"node {k} out of range")
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (transform.dim,):
        raise DimensionError(f"state has shape {x.shape}, expected trailing {transform.dim}")
    if direction == "forward":
        return x @ transform.A[k].T + transform.zeta[k]
    if direction == "inverse":
        return x @ transform.Ainv[k].T - transform.Ainv[k] @ transform.zeta[k]
    raise ParameterError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def transform_coefficients(transform: TransformData, b: Callable, sigma: Callable):
    """Callbacks ``(b~, sigma~)`` acting on transformed states.

    ``b~(t, x~, u) = Ainv(t) b(t, phi_t(x~), u)`` and likewise for ``sigma``;
    ``A``, ``Ainv`` and ``zeta`` are looked up at the node nearest to ``t``.
    """
    grid = transform.grid

    def btil(t, xt, u):
        k = grid.node_of(t)
        x = phi_map(transform, k, xt)
        return np.asarray(b(t, x, u), dtype=float) @ transform.Ainv[k].T

    def sigtil(t, xt, u):
        k = grid.node_of(t)
        x = phi_map(transform, k, xt)
        return np.einsum("ij,...jw->...iw", transform.Ainv[k], np.asarray(sigma(t, x, u), dtype=float))

    return btil, sigtil


@dataclass(frozen=True, eq=False)
class CrosscheckReport:
    """Per-sample sup-node gaps ``|X - phi(X~)|`` and scales ``sup |X|``."""

    gaps: np.ndarray
    scales: np.ndarray
    direct: np.ndarray
    mapped: np.ndarray

    @property
    def gap(self) -> float:
        return float(np.max(self.gaps))

    @property
    def relative_gaps(self) -> np.ndarray:
        return np.where(self.scales > 0, self.gaps / np.where(self.scales > 0, self.scales, 1.0), self.gaps)

    @property
    def relative_gap(self) -> float:
        return float(np.max(self.relative_gaps))


def crosscheck_batch(
    system: AffineRoughSystem,
    driver: GridRoughPath,
    x0,
    control,
    dW: np.ndarray,
    transform: TransformData | None = None,
) -> CrosscheckReport:
    """Direct rough solve against the classical solve in transformed coordinates.

    Both legs use the same Brownian increments ``dW`` of shape ``(S, n, dw)``.
    The transformed leg feeds ``control(t, phi_t(x~))`` so the control sees
    original coordinates.
    """
    if transform is None:
        transform = transform_for_system(system, driver)
    if transform.grid != driver.grid:
        raise DimensionError("transform and driver live on different grids")
    grid = driver.grid
    direct, _, _ = solve_batch(system, driver, x0, control, dW)
    btil, sigtil = transform_coefficients(transform, system.b, system.sigma)
    classical = AffineRoughSystem(grid, system.dim_x, system.dim_w, system.dim_eta, b=btil, sigma=sigtil)

    ctrl = None
    if control is not None:
        def ctrl(t, xt):
            return control(t, phi_map(transform, grid.node_of(t), xt))

    x0t = phi_map(transform, 0, np.asarray(x0, dtype=float).reshape(-1), "inverse")
    tilde, _, _ = solve_batch(classical, driver, x0t, ctrl, dW)
    mapped = np.einsum("nij,snj->sni", transform.A, tilde) + transform.zeta
    gaps = np.max(np.abs(direct - mapped), axis=(1, 2))
    scales = np.max(np.abs(direct), axis=(1, 2))
    return CrosscheckReport(gaps, scales, direct, mapped)


def crosscheck_transform(
    system: AffineRoughSystem,
    driver: GridRoughPath,
    x0,
    control=None,
    seed: int = 0,
    dW: np.ndarray | None = None,
    transform: TransformData | None = None,
) -> CrosscheckReport:
    """Single-sample :func:`crosscheck_batch` with increments drawn from ``seed``."""
    if dW is None:
        dW = brownian_increments(seed, driver.grid.dt, system.dim_w)
    dW = np.asarray(dW, dtype=float).reshape(1, driver.grid.n, system.dim_w)
    return crosscheck_batch(system, driver, x0, control, dW, transform)


def transform_to_csv(transform: TransformData) -> str:
    dx = transform.dim
    cols = ["t"]
    cols += [f"A_{i + 1}{j + 1}" for i in range(dx) for j in range(dx)]
    cols += [f"Ainv_{i + 1}{j + 1}" for i in range(dx) for j in range(dx)]
    cols += [f"zeta_{i + 1}" for i in range(dx)] + ["defect"]
    defects = node_defects(transform.A, transform.Ainv)
    out = io.StringIO()
    out.write(",".join(cols) + "\n")
    for k, t in enumerate(transform.grid.times):
        vals = [t, *transform.A[k].ravel(), *transform.Ainv[k].ravel(), *transform.zeta[k], defects[k]]
        out.write(",".join(repr(float(v)) for v in vals) + "\n")
    return out.getvalue()
