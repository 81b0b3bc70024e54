"""Discrete geometric rough paths on a time grid.

A :class:`GridRoughPath` stores the first level at every node and the second
level only on consecutive intervals; the second level over any other pair of
nodes is rebuilt with Chen's relation.  Second-level matrices use the
convention ``level2[k][a, b] = int_{t_k}^{t_{k+1}} (eta^a_r - eta^a_{t_k}) d eta^b_r``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, NodeIndexError, ParameterError, TimeRangeError
from .seeding import rng_for

DEFAULT_ALPHA = 0.45
DEFAULT_FINE_FACTOR = 2.0**-14


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes ``0 = t_0 < ... < t_n = T``."""

    times: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times)
        if t.ndim != 1 or t.size < 2:
            raise DimensionError("a time grid needs at least two nodes")
        if t[0] != 0.0:
            raise ParameterError(f"time grid must start at 0, got {t[0]}")
        if not np.all(np.diff(t) > 0):
            raise ParameterError("time grid must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, n: int) -> "TimeGrid":
        if n < 1:
            raise ParameterError("need at least one interval")
        if not T > 0:
            raise ParameterError("horizon T must be positive")
        t = np.linspace(0.0, T, n + 1)
        return cls(t)

    @classmethod
    def from_mesh(cls, T: float, mesh: float) -> "TimeGrid":
        """Uniform grid with spacing ``mesh``; ``T / mesh`` must be an integer."""
        if not mesh > 0:
            raise ParameterError(f"mesh must be positive, got {mesh}")
        n = round(T / mesh)
        if n < 1 or not math.isclose(n * mesh, T, rel_tol=1e-12, abs_tol=1e-15):
            raise ParameterError(f"mesh {mesh} does not divide T={T}")
        return cls.uniform(T, n)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def mesh(self) -> float:
        return float(np.max(self.dt))

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.times.shape == other.times.shape and bool(np.all(self.times == other.times))

    def __hash__(self):
        return hash(self.times.tobytes())

    def node_of(self, t: float) -> int:
        """Index of the node nearest to ``t``."""
        if t < -1e-12 * self.T or t > self.T * (1 + 1e-12):
            raise TimeRangeError(f"t={t} outside [0, {self.T}]")
        k = int(np.searchsorted(self.times, t))
        if k > self.n:
            return self.n
        if k > 0 and (t - self.times[k - 1]) <= (self.times[k] - t):
            return k - 1
        return k

    def indices_of(self, coarse: "TimeGrid") -> np.ndarray:
        """Positions of ``coarse`` nodes inside this grid (must be a sub-grid)."""
        idx = np.searchsorted(self.times, coarse.times)
        idx = np.clip(idx, 0, self.n)
        lo = np.clip(idx - 1, 0, self.n)
        pick = np.where(
            np.abs(self.times[lo] - coarse.times) < np.abs(self.times[idx] - coarse.times), lo, idx
        )
        tol = 1e-9 * self.mesh
        if np.any(np.abs(self.times[pick] - coarse.times) > tol):
            raise DimensionError("coarse grid is not a sub-grid of this grid")
        return pick


@dataclass(frozen=True, eq=False)
class GridRoughPath:
    grid: TimeGrid
    values: np.ndarray
    level2: np.ndarray
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim == 1:
            v = _frozen(v[:, None])
        l2 = _frozen(self.level2)
        if v.shape[0] != len(self.grid):
            raise DimensionError(f"{v.shape[0]} values for {len(self.grid)} grid nodes")
        d = v.shape[1]
        if l2.shape != (self.grid.n, d, d):
            raise DimensionError(f"level2 has shape {l2.shape}, expected {(self.grid.n, d, d)}")
        if not (1.0 / 3.0 < self.alpha <= 0.5):
            raise ParameterError(f"alpha={self.alpha} outside (1/3, 1/2]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "level2", l2)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def increment(self, i: int, j: int) -> np.ndarray:
        return self.values[j] - self.values[i]

    def chen_area(self, i: int, j: int) -> np.ndarray:
        return chen_area(self, i, j)

    def restrict(self, indices: Sequence[int] | np.ndarray) -> "GridRoughPath":
        """Chen-coarsen onto the sub-grid given by node ``indices``."""
        idx = np.asarray(indices, dtype=int)
        if idx[0] != 0 or idx[-1] != self.grid.n or np.any(np.diff(idx) <= 0):
            raise NodeIndexError("restriction indices must increase from 0 to the last node")
        inc = self.increments
        starts = np.repeat(idx[:-1], np.diff(idx))
        local = self.values[:-1] - self.values[starts]
        cross = np.einsum("ka,kb->kab", local, inc)
        l2 = np.add.reduceat(self.level2 + cross, idx[:-1], axis=0)
        return GridRoughPath(TimeGrid(self.grid.times[idx]), self.values[idx], l2, self.alpha)

    def coarsen_to(self, coarse: TimeGrid) -> "GridRoughPath":
        return self.restrict(self.grid.indices_of(coarse))

    def shifted(self, c) -> "GridRoughPath":
        """Same increments, first level translated by a constant vector."""
        return GridRoughPath(self.grid, self.values + np.asarray(c, dtype=float), self.level2, self.alpha)

    def translated(self, h_values, eps: float = 1.0) -> "GridRoughPath":
        """Driver ``eta + eps h`` for a path ``h`` sampled on the grid.

        ``h`` is treated as linear on each interval, so the cross integrals
        reduce to ``(deta (x) dh + dh (x) deta) / 2`` and geometricity is kept.
        """
        h = _as_samples(h_values, self.grid)
        if h.shape[1] != self.dim:
            raise DimensionError(f"h has dimension {h.shape[1]}, driver {self.dim}")
        dh = eps * np.diff(h, axis=0)
        inc = self.increments
        l2 = (
            self.level2
            + 0.5 * (np.einsum("ka,kb->kab", inc, dh) + np.einsum("ka,kb->kab", dh, inc))
            + 0.5 * np.einsum("ka,kb->kab", dh, dh)
        )
        return GridRoughPath(self.grid, self.values + eps * h, l2, self.alpha)

    def symmetric_defect(self) -> float:
        """Max deviation of sym(level2[k]) from half the squared increment."""
        inc = self.increments
        sym = 0.5 * (self.level2 + np.swapaxes(self.level2, 1, 2))
        half = 0.5 * np.einsum("ka,kb->kab", inc, inc)
        return float(np.max(np.abs(sym - half))) if inc.size else 0.0


def _as_samples(samples, grid: TimeGrid) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != len(grid):
        raise DimensionError(f"{x.shape[0] if x.ndim else 0} samples for {len(grid)} grid nodes")
    return x


def lift_piecewise_linear(samples, grid: TimeGrid, alpha: float = DEFAULT_ALPHA) -> GridRoughPath:
    """Canonical lift of the piecewise-linear interpolation of ``samples``."""
    x = _as_samples(samples, grid)
    inc = np.diff(x, axis=0)
    l2 = 0.5 * np.einsum("ka,kb->kab", inc, inc)
    return GridRoughPath(grid, x, l2, alpha)


def lift_brownian_stratonovich(
    seed: int,
    dims: int,
    fine_mesh: float | None,
    coarse_grid: TimeGrid,
    alpha: float = DEFAULT_ALPHA,
    ito: bool = False,
) -> GridRoughPath:
    """Sample a Brownian path on a fine grid and return its Stratonovich lift
    Chen-coarsened onto ``coarse_grid``.

    Each coarse interval is split into ``ceil(dt / fine_mesh)`` equal pieces.
    ``fine_mesh=None`` uses ``2**-14 * T``.  With ``ito=True`` the bracket
    ``dt/2 * I`` is subtracted from every second-level increment.
    """
    if dims < 1:
        raise ParameterError(f"dims must be >= 1, got {dims}")
    if fine_mesh is None:
        fine_mesh = DEFAULT_FINE_FACTOR * coarse_grid.T
    if not fine_mesh > 0:
        raise ParameterError(f"fine_mesh must be positive, got {fine_mesh}")
    if fine_mesh > coarse_grid.mesh * (1 + 1e-12):
        raise ParameterError("fine_mesh must not exceed the coarse mesh")
    dt = coarse_grid.dt
    m = np.maximum(1, np.ceil(dt / fine_mesh - 1e-9).astype(int))
    h = np.repeat(dt / m, m)
    z = rng_for(seed).standard_normal((h.size, dims))
    inc = z * np.sqrt(h)[:, None]
    fine_vals = np.vstack([np.zeros((1, dims)), np.cumsum(inc, axis=0)])
    starts = np.concatenate([[0], np.cumsum(m)[:-1]])
    local = fine_vals[:-1] - fine_vals[np.repeat(starts, m)]
    per_step = np.einsum("ka,kb->kab", local + 0.5 * inc, inc)
    l2 = np.add.reduceat(per_step, starts, axis=0)
    if ito:
        l2 = l2 - 0.5 * dt[:, None, None] * np.eye(dims)
    coarse_vals = fine_vals[np.concatenate([starts, [h.size]])]
    return GridRoughPath(coarse_grid, coarse_vals, l2, alpha)


def chen_area(path: GridRoughPath, i: int, j: int) -> np.ndarray:
    """Second level between nodes ``i < j`` rebuilt from consecutive intervals."""
    n = path.grid.n
    if not (0 <= i < j <= n):
        raise NodeIndexError(f"need 0 <= i < j <= {n}, got i={i}, j={j}")
    v = path.values
    inc = v[i + 1 : j + 1] - v[i:j]
    local = v[i:j] - v[i]
    return path.level2[i:j].sum(axis=0) + local.T @ inc


@dataclass(frozen=True)
class RoughDistanceReport:
    first_level: float
    second_level: float

    @property
    def total(self) -> float:
        return self.first_level + self.second_level


def holder_distance(a: GridRoughPath, b: GridRoughPath, alpha: float | None = None) -> RoughDistanceReport:
    """Grid-pair supremum version of the inhomogeneous alpha-Hölder rough path metric."""
    if a.grid != b.grid or a.dim != b.dim:
        raise DimensionError("paths must share grid and dimension")
    if alpha is None:
        alpha = a.alpha
    t = a.grid.times
    va, vb = a.values, b.values
    # prefix sums S_j = area(0, j) + v_0 (x) (v_j - v_0); area(i, j) = S_j - S_i - v_i (x) (v_j - v_i)
    sa = np.concatenate([np.zeros((1, a.dim, a.dim)),
                         np.cumsum(a.level2 + np.einsum("ka,kb->kab", va[:-1], a.increments), axis=0)])
    sb = np.concatenate([np.zeros((1, b.dim, b.dim)),
                         np.cumsum(b.level2 + np.einsum("ka,kb->kab", vb[:-1], b.increments), axis=0)])
    first = 0.0
    second = 0.0
    for i in range(a.grid.n):
        dta = va[i + 1 :] - va[i]
        dtb = vb[i + 1 :] - vb[i]
        gap = t[i + 1 :] - t[i]
        d1 = np.linalg.norm(dta - dtb, axis=1) / gap**alpha
        area_a = sa[i + 1 :] - sa[i] - np.einsum("a,kb->kab", va[i], dta)
        area_b = sb[i + 1 :] - sb[i] - np.einsum("a,kb->kab", vb[i], dtb)
        d2 = np.sqrt(np.sum((area_a - area_b) ** 2, axis=(1, 2))) / gap ** (2 * alpha)
        first = max(first, float(d1.max()))
        second = max(second, float(d2.max()))
    return RoughDistanceReport(first, second)


# -- serialization -----------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_rough_path(path: GridRoughPath) -> str:
    d, n = path.dim, path.grid.n
    out = io.StringIO()
    out.write("d,n,alpha,T\n")
    out.write(f"{d},{n},{_fmt(path.alpha)},{_fmt(path.grid.T)}\n")
    out.write(",".join(["t"] + [f"eta_{a + 1}" for a in range(d)]) + "\n")
    for t, row in zip(path.grid.times, path.values):
        out.write(",".join([_fmt(t)] + [_fmt(x) for x in row]) + "\n")
    out.write(",".join(f"l2_{a + 1}{b + 1}" for a in range(d) for b in range(d)) + "\n")
    for m in path.level2:
        out.write(",".join(_fmt(x) for x in m.ravel()) + "\n")
    return out.getvalue()


def load_rough_path(text: str) -> GridRoughPath:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        d_s, n_s, alpha_s, T_s = lines[1].split(",")
        d, n, alpha, T = int(d_s), int(n_s), float(alpha_s), float(T_s)
        node_rows = [list(map(float, ln.split(","))) for ln in lines[3 : 3 + n + 1]]
        l2_rows = [list(map(float, ln.split(","))) for ln in lines[3 + n + 2 : 3 + n + 2 + n]]
    except (IndexError, ValueError) as exc:
        raise DimensionError(f"malformed rough path file: {exc}") from exc
    nodes = np.array(node_rows)
    l2 = np.array(l2_rows)
    if nodes.shape != (n + 1, d + 1) or l2.shape != (n, d * d):
        raise DimensionError("rough path file does not match its header")
    grid = TimeGrid(nodes[:, 0])
    if not math.isclose(grid.T, T, rel_tol=1e-12):
        raise DimensionError("header T does not match the last node")
    return GridRoughPath(grid, nodes[:, 1:], l2.reshape(n, d, d), alpha)


def save_rough_path(path: GridRoughPath, filename) -> None:
    with open(filename, "w", encoding="utf-8") as fh:
        fh.write(dump_rough_path(path))


def read_rough_path(filename) -> GridRoughPath:
    with open(filename, encoding="utf-8") as fh:
        return load_rough_path(fh.read())


def path_digest(path: GridRoughPath) -> str:
    import hashlib

    h = hashlib.sha256()
    for arr in (path.grid.times, path.values, path.level2):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]
