"""Periodic structured grids and finite-difference calculus on them.

Fields are plain ``numpy`` arrays whose leading ``d`` axes are the grid axes
(row-major point order).  Component axes trail: a scalar field has shape
``grid.shape``, a vector field ``grid.shape + (d,)`` and a symmetric matrix
field ``grid.shape + (d, d)``.  Periodicity is exact: every stencil wraps via
modular index arrays and there are no ghost cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import SingularMetric

MIN_POINTS = 8
COND_MAX = 1e12


@dataclass(frozen=True)
class PeriodicGrid:
    shape: tuple[int, ...]
    periods: tuple[float, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        periods = tuple(float(p) for p in np.atleast_1d(self.periods))
        if len(shape) != len(periods):
            raise ValueError(f"shape {shape} and periods {periods} differ in length")
        if any(n < MIN_POINTS for n in shape):
            raise ValueError(f"every axis needs at least {MIN_POINTS} points, got {shape}")
        if any(not np.isfinite(p) or p <= 0 for p in periods):
            raise ValueError(f"periods must be positive and finite, got {periods}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "periods", periods)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.periods, self.shape))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.arange(n) * h for n, h in zip(self.shape, self.spacing)]

    @cached_property
    def _points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        pts = np.stack(mesh, axis=-1)
        pts.setflags(write=False)
        return pts

    def points(self) -> np.ndarray:
        """Coordinates of every grid point, shape ``shape + (d,)``."""
        return self._points

    def point(self, index) -> np.ndarray:
        index = np.asarray(index) % np.asarray(self.shape)
        return index * np.asarray(self.spacing)

    def refine(self, factor: int = 2) -> "PeriodicGrid":
        return PeriodicGrid(tuple(n * factor for n in self.shape), self.periods)


# --- pointwise linear algebra -------------------------------------------------


def spd_inverse(m: np.ndarray, cond_max: float = COND_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Invert a stack of symmetric positive definite matrices.

    Returns ``(inverse, eigenvalues)``.  Raises ``SingularMetric`` when a
    matrix is not positive definite or its condition number exceeds
    ``cond_max``.
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-1] == 1:
        w = m[..., 0:1, 0]
        bad = ~(w > 0)
        if np.any(bad):
            raise SingularMetric("metric is not positive definite")
        return 1.0 / m, w
    if not np.all(np.isfinite(m)):
        raise SingularMetric("metric has non-finite entries")
    w = np.linalg.eigvalsh(m)
    if np.any(w[..., 0] <= 0):
        raise SingularMetric("metric is not positive definite")
    if np.any(w[..., -1] > cond_max * w[..., 0]):
        raise SingularMetric(f"metric condition number exceeds {cond_max:g}")
    return np.linalg.inv(m), w


# --- finite differences -------------------------------------------------------


def _check_order(order: int) -> None:
    if order not in (2, 4):
        raise ValueError(f"finite-difference order must be 2 or 4, got {order}")


@lru_cache(maxsize=None)
def _wrap_index(n: int, k: int) -> np.ndarray:
    return (np.arange(n) + k) % n


def _at(f: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Periodic neighbour values f[i + k] along ``axis``."""
    return np.take(f, _wrap_index(f.shape[axis], k), axis=axis)


def _d1(f: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    if order == 2:
        return (_at(f, 1, axis) - _at(f, -1, axis)) / (2.0 * h)
    return (
        -_at(f, 2, axis) + 8.0 * _at(f, 1, axis)
        - 8.0 * _at(f, -1, axis) + _at(f, -2, axis)
    ) / (12.0 * h)


def _d2(f: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    if order == 2:
        return (_at(f, 1, axis) - 2.0 * f + _at(f, -1, axis)) / (h * h)
    return (
        -_at(f, 2, axis) + 16.0 * _at(f, 1, axis) - 30.0 * f
        + 16.0 * _at(f, -1, axis) - _at(f, -2, axis)
    ) / (12.0 * h * h)


def fd_gradient(f: np.ndarray, grid: PeriodicGrid, order: int = 2) -> np.ndarray:
    """Periodic central-difference gradient.

    ``f`` has shape ``grid.shape + C``; the result has shape
    ``grid.shape + (d,) + C`` with the derivative index first among the
    component axes.
    """
    _check_order(order)
    f = np.asarray(f, dtype=float)
    parts = [_d1(f, axis, h, order) for axis, h in enumerate(grid.spacing)]
    return np.stack(parts, axis=grid.d)


def fd_hessian(f: np.ndarray, grid: PeriodicGrid, order: int = 2) -> np.ndarray:
    """Second partial derivatives of a scalar field, shape ``grid.shape + (d, d)``.

    Diagonal entries use the compact second-difference stencil, mixed
    partials nested first differences.  The output is symmetric by
    construction.
    """
    _check_order(order)
    f = np.asarray(f, dtype=float)
    d = grid.d
    h = grid.spacing
    out = np.empty(f.shape + (d, d))
    firsts = [_d1(f, i, h[i], order) for i in range(d)]
    for i in range(d):
        out[..., i, i] = _d2(f, i, h[i], order)
        for j in range(i + 1, d):
            mixed = _d1(firsts[i], j, h[j], order)
            out[..., i, j] = mixed
            out[..., j, i] = mixed
    return out


def metric_christoffels(
    g: np.ndarray,
    grid: PeriodicGrid,
    order: int = 2,
    ginv: np.ndarray | None = None,
) -> np.ndarray:
    """Christoffel symbols of a discrete Riemannian metric field.

    Returns ``gamma[..., k, i, j]`` = Gamma^k_ij, computed from
    finite-difference derivatives of the components of ``g``.
    """
    if ginv is None:
        ginv, _ = spd_inverse(g)
    dg = fd_gradient(g, grid, order)  # [..., l, i, j] = d_l g_ij
    # first kind: [..., l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    first = 0.5 * (
        np.swapaxes(dg, -3, -2)  # [l,i,j] <- d_i g_lj
        + np.moveaxis(dg, -3, -1)  # [l,i,j] <- d_j g_li
        - dg
    )
    gamma = np.einsum("...kl,...lij->...kij", ginv, first)
    return 0.5 * (gamma + np.swapaxes(gamma, -1, -2))


def covariant_hessian(
    u: np.ndarray,
    grid: PeriodicGrid,
    gamma: np.ndarray,
    order: int = 2,
    du: np.ndarray | None = None,
    hess: np.ndarray | None = None,
) -> np.ndarray:
    """u_;ij = u_,ij - Gamma^k_ij u_k."""
    if du is None:
        du = fd_gradient(u, grid, order)
    if hess is None:
        hess = fd_hessian(u, grid, order)
    return hess - np.einsum("...kij,...k->...ij", gamma, du)


def laplace_beltrami(
    f: np.ndarray,
    grid: PeriodicGrid,
    ginv: np.ndarray,
    gamma: np.ndarray,
    order: int = 2,
) -> np.ndarray:
    hess = covariant_hessian(f, grid, gamma, order)
    return np.einsum("...ij,...ij->...", ginv, hess)


def integrate(f: np.ndarray, grid: PeriodicGrid, weight: np.ndarray | None = None) -> float:
    """Rectangle rule on the periodic grid (spectrally accurate for smooth data)."""
    f = np.asarray(f, dtype=float)
    if weight is not None:
        f = f * weight
    return float(np.sum(f) * grid.cell_volume)
