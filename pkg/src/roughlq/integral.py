"""Rough stochastic integrals of controlled samples and a rough Itô check.

Layout conventions (``N`` grid nodes, driver dimension ``d``):

* ``ControlledSample.z`` has shape ``(N, k, m)``; a sample is integrable
  against the driver when ``m == d`` and then ``Z_n @ deta_n`` is a k-vector.
* ``ControlledSample.zprime`` has shape ``(N, d, k, m)``; ``zprime[n, a]`` is
  the Gubinelli derivative of ``Z`` in driver direction ``a``.  The
  compensated term is ``sum_{a,b} zprime[n, a, :, b] * level2[n, a, b]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NodeIndexError, ParameterError
from .rough_path import GridRoughPath, TimeGrid


@dataclass(frozen=True, eq=False)
class ControlledSample:
    grid: TimeGrid
    z: np.ndarray
    zprime: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        zp = np.asarray(self.zprime, dtype=float)
        if z.ndim != 3 or zp.ndim != 4:
            raise DimensionError("z must be (N, k, m) and zprime (N, d, k, m)")
        if z.shape[0] != len(self.grid) or zp.shape[0] != len(self.grid):
            raise DimensionError("one value per grid node required")
        if zp.shape[2:] != z.shape[1:]:
            raise DimensionError(f"zprime {zp.shape} inconsistent with z {z.shape}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "zprime", zp)

    @classmethod
    def scalar(cls, grid: TimeGrid, z, zprime) -> "ControlledSample":
        """Scalar integrand for a one-dimensional driver."""
        n = len(grid)
        z = np.broadcast_to(np.asarray(z, dtype=float), (n,))
        zp = np.broadcast_to(np.asarray(zprime, dtype=float), (n,))
        return cls(grid, z.reshape(n, 1, 1), zp.reshape(n, 1, 1, 1))

    @property
    def driver_dim(self) -> int:
        return self.zprime.shape[1]

    def remainder(self, driver: GridRoughPath, i: int, j: int) -> np.ndarray:
        """``R^Z_{s,t} = dZ_{s,t} - Z'_s deta_{s,t}`` between nodes i and j."""
        deta = driver.increment(i, j)
        return self.z[j] - self.z[i] - np.einsum("a,akm->km", deta, self.zprime[i])

    def __add__(self, other: "ControlledSample") -> "ControlledSample":
        _check_same_grid(self.grid, other.grid)
        return ControlledSample(self.grid, self.z + other.z, self.zprime + other.zprime)

    def scaled(self, c: float) -> "ControlledSample":
        return ControlledSample(self.grid, c * self.z, c * self.zprime)


def _check_same_grid(a: TimeGrid, b: TimeGrid) -> None:
    if a != b:
        raise DimensionError("objects live on different grids")


def compensated_terms(sample: ControlledSample, driver: GridRoughPath) -> np.ndarray:
    """Per-interval terms ``Z_n deta_n + Z'_n eta2_n``, shape (N-1, k)."""
    _check_same_grid(sample.grid, driver.grid)
    d = driver.dim
    if sample.z.shape[2] != d or sample.driver_dim != d:
        raise DimensionError(
            f"integrand columns {sample.z.shape[2]} / derivative directions "
            f"{sample.driver_dim} do not match driver dimension {d}"
        )
    first = np.einsum("nkb,nb->nk", sample.z[:-1], driver.increments)
    second = np.einsum("nakb,nab->nk", sample.zprime[:-1], driver.level2)
    return first + second


def rough_integral(sample: ControlledSample, driver: GridRoughPath, i: int = 0, j: int | None = None) -> np.ndarray:
    """Compensated Riemann sum of ``int Z d eta`` over ``[t_i, t_j]`` on the finest partition."""
    n = driver.grid.n
    if j is None:
        j = n
    if not (0 <= i < j <= n):
        raise NodeIndexError(f"need 0 <= i < j <= {n}, got i={i}, j={j}")
    return compensated_terms(sample, driver)[i:j].sum(axis=0)


def rough_integral_path(sample: ControlledSample, driver: GridRoughPath) -> np.ndarray:
    """Running integral from 0 at every node, shape (N, k)."""
    terms = compensated_terms(sample, driver)
    return np.vstack([np.zeros((1, terms.shape[1])), np.cumsum(terms, axis=0)])


def controlled_product(a: ControlledSample, b: ControlledSample) -> ControlledSample:
    """Product path ``(Z z, Z' z + Z z')`` with matrix multiplication at each node."""
    _check_same_grid(a.grid, b.grid)
    if a.z.shape[2] != b.z.shape[1]:
        raise DimensionError(f"cannot multiply values {a.z.shape[1:]} and {b.z.shape[1:]}")
    if a.driver_dim != b.driver_dim:
        raise DimensionError("derivatives refer to different driver dimensions")
    z = a.z @ b.z
    zp = a.zprime @ b.z[:, None] + a.z[:, None] @ b.zprime
    return ControlledSample(a.grid, z, zp)


@dataclass(frozen=True, eq=False)
class ItoDecomposition:
    """Ingredients of ``X = X_0 + int b dt + int sigma dW + int X' d eta``.

    Shapes: ``x`` (N, dx), ``b`` (N, dx), ``sigma`` (N, dx, dw),
    ``xprime`` (N, dx, d), ``xsecond`` (N, d, dx, d), ``dw`` (N-1, dw).
    """

    x: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    xprime: np.ndarray
    xsecond: np.ndarray
    dw: np.ndarray


def rough_ito_residual(
    f: Callable[[np.ndarray], float],
    df: Callable[[np.ndarray], np.ndarray] | None,
    d2f: Callable[[np.ndarray], np.ndarray] | None,
    trajectory: ItoDecomposition,
    driver: GridRoughPath,
) -> float:
    """Sup over nodes of the defect in the rough Itô formula.

    Time and Brownian integrals are left-point sums on the driver grid; the
    rough integral uses ``(Df(X) X', D^2 f(X)(X', X') + Df(X) X'')``.
    """
    if f is None or df is None or d2f is None:
        raise ParameterError("f, Df and D^2 f must all be supplied")
    tr = trajectory
    x = np.asarray(tr.x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n_nodes, dx = x.shape
    if n_nodes != len(driver.grid):
        raise DimensionError("trajectory and driver grids differ")
    b = np.asarray(tr.b, dtype=float).reshape(n_nodes, dx)
    sigma = np.asarray(tr.sigma, dtype=float).reshape(n_nodes, dx, -1)
    dw = np.asarray(tr.dw, dtype=float).reshape(n_nodes - 1, sigma.shape[2])
    d = driver.dim
    xp = np.asarray(tr.xprime, dtype=float).reshape(n_nodes, dx, d)
    xpp = np.asarray(tr.xsecond, dtype=float).reshape(n_nodes, d, dx, d)
    dt = driver.grid.dt

    fx = np.array([float(f(xi)) for xi in x])
    g1 = np.array([np.asarray(df(xi), dtype=float).reshape(dx) for xi in x])
    g2 = np.array([np.asarray(d2f(xi), dtype=float).reshape(dx, dx) for xi in x])

    drift = np.einsum("ni,ni->n", g1[:-1], b[:-1]) * dt
    noise = np.einsum("ni,niw,nw->n", g1[:-1], sigma[:-1], dw)
    bracket = 0.5 * np.einsum("niw,njw,nij->n", sigma[:-1], sigma[:-1], g2[:-1]) * dt

    y = np.einsum("ni,nib->nb", g1, xp)[:, None, :]
    yp = (np.einsum("nij,nia,njb->nab", g2, xp, xp) + np.einsum("ni,naib->nab", g1, xpp))[:, :, None, :]
    rough = compensated_terms(ControlledSample(driver.grid, y, yp), driver)[:, 0]

    increments = drift + noise + bracket + rough
    rhs = np.concatenate([[0.0], np.cumsum(increments)])
    return float(np.max(np.abs(fx - fx[0] - rhs)))
