"""Extrinsic and intrinsic geometry of a spacelike graph {x0 = u(x)}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotSpacelike
from .grid import (
    PeriodicGrid,
    fd_gradient,
    fd_hessian,
    integrate,
    metric_christoffels,
    spd_inverse,
)
from .spacetime import SpacetimeModel

EPS_SPACE = 1e-6


@dataclass(frozen=True)
class GraphState:
    t: float
    u: np.ndarray


@dataclass(frozen=True)
class GeometrySnapshot:
    """Every derived field of one graph hypersurface.

    ``nu`` is the past-directed unit normal (contravariant, d+1 components);
    ``gamma`` holds the Christoffel symbols of the induced metric ``g``.
    """

    grid: PeriodicGrid
    fd_order: int
    u: np.ndarray
    Du: np.ndarray
    v: np.ndarray
    vtilde: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    g_eig: np.ndarray
    sqrtg: np.ndarray
    nu: np.ndarray
    h: np.ndarray
    H: np.ndarray
    normA2: np.ndarray
    volume: float
    conf: np.ndarray
    gamma: np.ndarray


def compute_geometry(
    model: SpacetimeModel,
    grid: PeriodicGrid,
    state: GraphState,
    order: int = 2,
    eps_space: float = EPS_SPACE,
) -> GeometrySnapshot:
    u = np.asarray(state.u, dtype=float)
    if u.shape != grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid {grid.shape}")
    model.require_domain(u)
    x = grid.points()
    d = grid.d

    sigma = model.sigma(u, x)
    sigma_inv, _ = spd_inverse(sigma)
    psi = model.psi(u, x)
    dpsi = model.dpsi(u, x)
    dsigma0 = model.dsigma0(u, x)
    conf = np.exp(psi)

    Du = fd_gradient(u, grid, order)
    Dup = np.einsum("...ij,...j->...i", sigma_inv, Du)  # u^i
    grad2 = np.einsum("...i,...i->...", Du, Dup)
    if np.max(grad2) >= 1.0 - eps_space:
        raise NotSpacelike(f"max |Du|^2 = {np.max(grad2):.9g} reached the spacelike margin")
    v = np.sqrt(1.0 - grad2)
    vtilde = 1.0 / v

    e2 = conf * conf
    g = e2[..., None, None] * (sigma - Du[..., :, None] * Du[..., None, :])
    ginv, g_eig = spd_inverse(g)
    sqrtg = np.sqrt(np.prod(g_eig, axis=-1))

    nu = np.empty(grid.shape + (d + 1,))
    nu[..., 0] = -vtilde / conf
    nu[..., 1:] = -(vtilde / conf)[..., None] * Dup

    gamma = metric_christoffels(g, grid, order, ginv=ginv)
    hess = fd_hessian(u, grid, order)
    cov_hess = hess - np.einsum("...kij,...k->...ij", gamma, Du)

    psidot = dpsi[..., 0]
    psik = dpsi[..., 1:]
    chr0ij = 0.5 * dsigma0 + psidot[..., None, None] * sigma
    uu = Du[..., :, None] * Du[..., None, :]
    pu = psik[..., None, :] * Du[..., :, None]  # Gamma^0_0j u_i
    inner = -cov_hess - psidot[..., None, None] * uu - pu - np.swapaxes(pu, -1, -2) - chr0ij
    h = (conf * v)[..., None, None] * inner
    H = np.einsum("...ij,...ij->...", ginv, h)
    mixed = np.einsum("...ik,...kj->...ij", ginv, h)
    normA2 = np.einsum("...ij,...ji->...", mixed, mixed)

    return GeometrySnapshot(
        grid=grid,
        fd_order=order,
        u=u,
        Du=Du,
        v=v,
        vtilde=vtilde,
        g=g,
        ginv=ginv,
        g_eig=g_eig,
        sqrtg=sqrtg,
        nu=nu,
        h=h,
        H=H,
        normA2=normA2,
        volume=integrate(sqrtg, grid),
        conf=conf,
        gamma=gamma,
    )


def principal_curvature_range(snap: GeometrySnapshot) -> tuple[float, float]:
    """Global min and max eigenvalue of the shape operator h^i_j."""
    shape_op = np.einsum("...ik,...kj->...ij", snap.ginv, snap.h)
    if shape_op.shape[-1] == 1:
        k = shape_op[..., 0, 0]
    else:
        k = np.linalg.eigvals(shape_op).real
    return float(np.min(k)), float(np.max(k))


def gradient_bound_certificate(snap: GeometrySnapshot) -> float:
    return float(np.max(snap.vtilde))
