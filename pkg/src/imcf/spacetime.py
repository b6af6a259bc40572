"""Analytic Lorentzian model spacetimes in conformal-product form.

Every model is written as

    ds^2 = e^{2 psi} ( -(dx0)^2 + sigma_ij(x0, x) dx^i dx^j )

over a flat torus with the given periods.  All callables are vectorized: the
time coordinate ``x0`` has any shape ``S`` and the spatial point ``x`` has
shape ``S + (d,)``.  Returned shapes are

    psi     -> S
    dpsi    -> S + (d+1,)       (d_0 psi, d_1 psi, ..., d_d psi)
    sigma   -> S + (d, d)
    dsigma0 -> S + (d, d)
    dsigmak -> S + (d, d, d)    [..., k, i, j] = d_k sigma_ij

Callables must be periodic in ``x`` and pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import (
    BarrierViolated,
    DomainError,
    NoHorizon,
    NotPositive,
    NotTimelike,
    UnsupportedTopology,
)
from .grid import spd_inverse

TWO_PI = 2.0 * math.pi
H_CURV_REL = 1e-4


@dataclass(frozen=True)
class SpacetimeModel:
    name: str
    d: int
    x0_range: tuple[float, float]
    periods: tuple[float, ...]
    psi: Callable
    dpsi: Callable
    sigma: Callable
    dsigma0: Callable
    dsigmak: Callable
    ricci_nu_nu: Callable | None = None
    homogeneous: bool = False
    # finite window used when random time samples are needed on an unbounded range
    sample_range: tuple[float, float] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.x0_range
        if not lo < hi:
            raise ValueError(f"empty time range {self.x0_range}")
        if len(self.periods) != self.d:
            raise ValueError("one period per spatial dimension required")

    @property
    def time_samples_range(self) -> tuple[float, float]:
        if self.sample_range is not None:
            return self.sample_range
        lo, hi = self.x0_range
        if math.isfinite(lo) and math.isfinite(hi):
            return lo, hi
        raise ValueError(f"model {self.name!r} needs an explicit sample_range")

    @property
    def curvature_step(self) -> float:
        lo, hi = self.x0_range
        scale = min(1.0, hi - lo)
        return H_CURV_REL * scale

    def in_domain(self, x0) -> np.ndarray:
        lo, hi = self.x0_range
        x0 = np.asarray(x0)
        return (x0 > lo) & (x0 < hi)

    def require_domain(self, x0) -> None:
        x0 = np.asarray(x0, dtype=float)
        if not np.all(self.in_domain(x0)):
            bad = x0[~self.in_domain(x0)] if x0.ndim else x0
            raise DomainError(
                f"time coordinate {np.ravel(bad)[0]:g} outside {self.x0_range} of model {self.name!r}"
            )

    def metric(self, x0, x) -> np.ndarray:
        """Full ambient metric g_ab, shape ``S + (d+1, d+1)``."""
        x0, x = _broadcast_point(x0, x, self.d)
        e2 = np.exp(2.0 * self.psi(x0, x))
        out = np.zeros(x0.shape + (self.d + 1, self.d + 1))
        out[..., 0, 0] = -e2
        out[..., 1:, 1:] = e2[..., None, None] * self.sigma(x0, x)
        return out

    def norm2(self, x0, x, vec) -> np.ndarray:
        """g(vec, vec) for contravariant ``vec`` of shape ``S + (d+1,)``."""
        x0, x = _broadcast_point(x0, x, self.d)
        vec = np.asarray(vec, dtype=float)
        e2 = np.exp(2.0 * self.psi(x0, x))
        s = self.sigma(x0, x)
        spatial = np.einsum("...i,...ij,...j->...", vec[..., 1:], s, vec[..., 1:])
        return e2 * (-vec[..., 0] ** 2 + spatial)


def _broadcast_point(x0, x, d):
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (d,):
        x = np.broadcast_to(x, x.shape + (d,)) if x.ndim == 0 else x
    shape = np.broadcast_shapes(x0.shape, x.shape[:-1])
    return np.broadcast_to(x0, shape), np.broadcast_to(x, shape + (d,))


# --- ambient geometry ---------------------------------------------------------


@dataclass(frozen=True)
class ChristoffelTime:
    """Time-index Christoffel blocks Gamma^0_00, Gamma^0_0i, Gamma^0_ij."""

    g000: np.ndarray
    g00i: np.ndarray
    g0ij: np.ndarray


@dataclass(frozen=True)
class SliceGeometry:
    """Geometry of the coordinate slice {x0 = const} (past-directed normal)."""

    hbar: np.ndarray
    Hbar: np.ndarray
    conf: np.ndarray


def christoffel_time(model: SpacetimeModel, x0, x) -> ChristoffelTime:
    model.require_domain(x0)
    x0, x = _broadcast_point(x0, x, model.d)
    dpsi = model.dpsi(x0, x)
    psidot = dpsi[..., 0]
    g0ij = 0.5 * model.dsigma0(x0, x) + psidot[..., None, None] * model.sigma(x0, x)
    return ChristoffelTime(g000=psidot, g00i=dpsi[..., 1:], g0ij=g0ij)


def slice_geometry(model: SpacetimeModel, x0, x) -> SliceGeometry:
    model.require_domain(x0)
    x0, x = _broadcast_point(x0, x, model.d)
    psi = model.psi(x0, x)
    psidot = model.dpsi(x0, x)[..., 0]
    sigma = model.sigma(x0, x)
    sigma_inv, _ = spd_inverse(sigma)
    conf = np.exp(psi)
    scaled = -0.5 * model.dsigma0(x0, x) - psidot[..., None, None] * sigma
    hbar = conf[..., None, None] * scaled
    Hbar = np.einsum("...ij,...ij->...", sigma_inv, scaled) / conf
    return SliceGeometry(hbar=hbar, Hbar=Hbar, conf=conf)


def reference_norm(model: SpacetimeModel, x0, x, eta) -> np.ndarray:
    """Norm of ``eta`` in the Riemannian metric e^{2psi}((dx0)^2 + sigma)."""
    model.require_domain(x0)
    x0, x = _broadcast_point(x0, x, model.d)
    eta = np.asarray(eta, dtype=float)
    s = model.sigma(x0, x)
    q = eta[..., 0] ** 2 + np.einsum("...i,...ij,...j->...", eta[..., 1:], s, eta[..., 1:])
    return np.exp(model.psi(x0, x)) * np.sqrt(q)


def ambient_ricci_contraction(
    model: SpacetimeModel,
    x0,
    x,
    nu,
    *,
    use_closed_form: bool = True,
    h: float | None = None,
) -> np.ndarray:
    """Ric(nu, nu) for a timelike contravariant vector ``nu``.

    Uses the model's closed form when available; otherwise the full ambient
    Ricci tensor is assembled from second-order central differences of the
    metric components.
    """
    model.require_domain(x0)
    x0, x = _broadcast_point(x0, x, model.d)
    nu = np.broadcast_to(np.asarray(nu, dtype=float), x0.shape + (model.d + 1,))
    if np.any(model.norm2(x0, x, nu) >= 0):
        raise NotTimelike("nu is not timelike")
    if use_closed_form and model.ricci_nu_nu is not None:
        return model.ricci_nu_nu(x0, x, nu)
    ric = ricci_tensor_fd(model, x0, x, h=h)
    return np.einsum("...a,...ab,...b->...", nu, ric, nu)


def ricci_tensor_fd(model: SpacetimeModel, x0, x, h: float | None = None) -> np.ndarray:
    """Ambient Ricci tensor R_bc by finite differences of the metric."""
    x0, x = _broadcast_point(x0, x, model.d)
    model.require_domain(x0)
    h = np.full(x0.shape, model.curvature_step if h is None else float(h))
    if not (np.all(model.in_domain(x0 - 2 * h)) and np.all(model.in_domain(x0 + 2 * h))):
        raise DomainError("curvature stencil leaves the time range")
    D = model.d + 1
    X = np.concatenate([x0[..., None], x], axis=-1)

    offsets = [np.zeros(D)]
    for a in range(D):
        e = np.eye(D)[a]
        offsets += [e, -e]
    pairs = [(a, b) for a in range(D) for b in range(a + 1, D)]
    for a, b in pairs:
        ea, eb = np.eye(D)[a], np.eye(D)[b]
        offsets += [ea + eb, ea - eb, -ea + eb, -ea - eb]
    offsets = np.array(offsets)
    pts = X[None, ...] + offsets.reshape((len(offsets),) + (1,) * x0.ndim + (D,)) * h[None, ..., None]
    h = h[..., None, None]
    G = model.metric(pts[..., 0], pts[..., 1:])

    G0 = G[0]
    dG = np.empty(x0.shape + (D, D, D))  # [..., c, a, b] = d_c g_ab
    ddG = np.empty(x0.shape + (D, D, D, D))  # [..., c, e, a, b]
    for a in range(D):
        gp, gm = G[1 + 2 * a], G[2 + 2 * a]
        dG[..., a, :, :] = (gp - gm) / (2 * h)
        ddG[..., a, a, :, :] = (gp - 2 * G0 + gm) / (h * h)
    base = 1 + 2 * D
    for n, (a, b) in enumerate(pairs):
        pp, pm, mp, mm = G[base + 4 * n: base + 4 * n + 4]
        mixed = (pp - pm - mp + mm) / (4 * h * h)
        ddG[..., a, b, :, :] = mixed
        ddG[..., b, a, :, :] = mixed

    ginv = np.linalg.inv(G0)
    # T[d,b,c] = d_b g_dc + d_c g_db - d_d g_bc
    T = np.einsum("...bdc->...dbc", dG) + np.einsum("...cdb->...dbc", dG) - dG
    gam = 0.5 * np.einsum("...ad,...dbc->...abc", ginv, T)
    dT = (
        np.einsum("...ebdc->...edbc", ddG)
        + np.einsum("...ecdb->...edbc", ddG)
        - ddG
    )
    dginv = -np.einsum("...ap,...epq,...qd->...ead", ginv, dG, ginv)
    dgam = 0.5 * (
        np.einsum("...ead,...dbc->...eabc", dginv, T)
        + np.einsum("...ad,...edbc->...eabc", ginv, dT)
    )
    ric = (
        np.einsum("...aabc->...bc", dgam)
        - np.einsum("...caab->...bc", dgam)
        + np.einsum("...aae,...ebc->...bc", gam, gam)
        - np.einsum("...ace,...eab->...bc", gam, gam)
    )
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


# --- built-in models ----------------------------------------------------------


def _eye_field(shape, d):
    return np.broadcast_to(np.eye(d), tuple(shape) + (d, d)).copy()


def make_minkowski_slab(
    d: int = 1, x0_min: float = -1.0, x0_max: float = 1.0, periods=None
) -> SpacetimeModel:
    """Flat slab (x0_min, x0_max) x T^d."""
    periods = tuple(periods) if periods is not None else (TWO_PI,) * d

    def psi(x0, x):
        return np.zeros(np.shape(x0))

    def dpsi(x0, x):
        return np.zeros(np.shape(x0) + (d + 1,))

    def sigma(x0, x):
        return _eye_field(np.shape(x0), d)

    def dsigma0(x0, x):
        return np.zeros(np.shape(x0) + (d, d))

    def dsigmak(x0, x):
        return np.zeros(np.shape(x0) + (d, d, d))

    def ricci(x0, x, nu):
        return np.zeros(np.shape(x0))

    return SpacetimeModel(
        name="minkowski",
        d=d,
        x0_range=(float(x0_min), float(x0_max)),
        periods=periods,
        psi=psi, dpsi=dpsi, sigma=sigma, dsigma0=dsigma0, dsigmak=dsigmak,
        ricci_nu_nu=ricci,
        homogeneous=True,
        params={"d": d, "x0_min": x0_min, "x0_max": x0_max, "periods": list(periods)},
    )


def make_exp_rw(lam: float = 1.0, d: int = 1, periods=None, sample_range=(-1.0, 3.0)) -> SpacetimeModel:
    """Exponentially contracting Robertson-Walker type model, psi = -lam x0, sigma = delta.

    Slices have e^psi Hbar = d lam and the future end x0 -> inf lies at finite
    proper time.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    periods = tuple(periods) if periods is not None else (TWO_PI,) * d

    def psi(x0, x):
        return -lam * np.asarray(x0, dtype=float)

    def dpsi(x0, x):
        out = np.zeros(np.shape(x0) + (d + 1,))
        out[..., 0] = -lam
        return out

    def sigma(x0, x):
        return _eye_field(np.shape(x0), d)

    def dsigma0(x0, x):
        return np.zeros(np.shape(x0) + (d, d))

    def dsigmak(x0, x):
        return np.zeros(np.shape(x0) + (d, d, d))

    def ricci(x0, x, nu):
        # conformally flat: R_00 = 0, R_0i = 0, R_ij = (d-1) lam^2 delta_ij
        nu = np.asarray(nu, dtype=float)
        return (d - 1) * lam**2 * np.sum(nu[..., 1:] ** 2, axis=-1)

    return SpacetimeModel(
        name="exprw",
        d=d,
        x0_range=(-math.inf, math.inf),
        periods=periods,
        psi=psi, dpsi=dpsi, sigma=sigma, dsigma0=dsigma0, dsigmak=dsigmak,
        ricci_nu_nu=ricci,
        homogeneous=True,
        sample_range=tuple(sample_range),
        params={"lam": lam, "d": d, "periods": list(periods)},
    )


def _sads_f(n, Lambda, m, kappa):
    c = 2.0 * Lambda / (n * (n + 1))

    def f(r):
        return kappa - c * r**2 - m * r ** (-(n - 1))

    return f


def make_sads_interior(
    n: int = 1,
    Lambda: float = -1.0,
    m: float = 1.0,
    kappa: int = 0,
    eps: float = 1e-3,
    periods=None,
) -> SpacetimeModel:
    """Black-hole interior of Schwarzschild-AdS with compactified Killing time.

    The time coordinate is x0 = r0 - r, so x0 increases toward the
    singularity r = 0 and x0_range = (eps, r0 - eps).  Spatial coordinates are
    (Killing time, circle angle); only n = 1 admits global periodic charts.
    """
    if n != 1:
        raise UnsupportedTopology(f"n={n}: the sphere factor has no global periodic chart")
    if m <= 0:
        raise ValueError("mass parameter must be positive")
    if kappa not in (0, 1, -1):
        raise ValueError("kappa must be 0, 1 or -1")
    f = _sads_f(n, Lambda, m, kappa)
    # bracket the first sign change of f on (0, R]
    rs = np.geomspace(1e-8, 1e4, 4000)
    vals = f(rs)
    sign_change = np.nonzero((vals[:-1] < 0) & (vals[1:] >= 0))[0]
    if not len(sign_change) or vals[0] >= 0:
        raise NoHorizon(f"f has no positive root for Lambda={Lambda}, m={m}, kappa={kappa}")
    i = sign_change[0]
    r0 = brentq(f, rs[i], rs[i + 1], xtol=1e-15, rtol=1e-15)
    d = n + 1
    periods = tuple(periods) if periods is not None else (TWO_PI,) * d
    c = 2.0 * Lambda / (n * (n + 1))

    def r_of(x0):
        return r0 - np.asarray(x0, dtype=float)

    def ft(r):  # f~ = -f
        return -kappa + c * r**2 + m * r ** (-(n - 1))

    def ft_r(r):
        return 2 * c * r - (n - 1) * m * r ** (-n)

    def psi(x0, x):
        return -0.5 * np.log(ft(r_of(x0)))

    def dpsi(x0, x):
        r = r_of(x0)
        out = np.zeros(np.shape(x0) + (d + 1,))
        out[..., 0] = 0.5 * ft_r(r) / ft(r)  # d/dx0 = -d/dr
        return out

    def sigma(x0, x):
        r = r_of(x0)
        F = ft(r)
        out = np.zeros(np.shape(x0) + (d, d))
        out[..., 0, 0] = F**2
        out[..., 1, 1] = F * r**2
        return out

    def dsigma0(x0, x):
        r = r_of(x0)
        F, Fr = ft(r), ft_r(r)
        out = np.zeros(np.shape(x0) + (d, d))
        out[..., 0, 0] = -2 * F * Fr
        out[..., 1, 1] = -(Fr * r**2 + 2 * F * r)
        return out

    def dsigmak(x0, x):
        return np.zeros(np.shape(x0) + (d, d, d))

    def ricci(x0, x, nu):
        # Einstein space: Ric = (2/n) Lambda g
        return (2.0 / n) * Lambda * _norm2_sads(x0, x, nu)

    def _norm2_sads(x0, x, nu):
        nu = np.asarray(nu, dtype=float)
        e2 = np.exp(2 * psi(x0, x))
        s = sigma(x0, x)
        sp = np.einsum("...i,...ij,...j->...", nu[..., 1:], s, nu[..., 1:])
        return e2 * (-nu[..., 0] ** 2 + sp)

    return SpacetimeModel(
        name="sads",
        d=d,
        x0_range=(eps, r0 - eps),
        periods=periods,
        psi=psi, dpsi=dpsi, sigma=sigma, dsigma0=dsigma0, dsigmak=dsigmak,
        ricci_nu_nu=ricci,
        homogeneous=True,
        params={"n": n, "Lambda": Lambda, "m": m, "kappa": kappa, "eps": eps,
                "r0": r0, "periods": list(periods)},
    )


def sads_radius(model: SpacetimeModel, x0):
    """Areal radius r of an S-AdS interior model at time coordinate x0."""
    return model.params["r0"] - np.asarray(x0, dtype=float)


# --- time reparameterization --------------------------------------------------


def lattice_points(model: SpacetimeModel, n_per_dim: int = 8) -> np.ndarray:
    """Regular lattice of spatial sample points, shape (n_per_dim**d, d)."""
    axes = [np.arange(n_per_dim) * L / n_per_dim for L in model.periods]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, model.d)


def _evaluate_phi(phi, tau):
    tau = np.asarray(tau, dtype=float)
    return np.broadcast_to(np.asarray(phi(tau), dtype=float), tau.shape)


def reparameterize(
    model: SpacetimeModel,
    phi: Callable,
    tau0: float,
    *,
    x0_max: float | None = None,
    dphi: Callable | None = None,
    n_quad: int = 4096,
    n_x: int = 8,
) -> SpacetimeModel:
    """New time function xt = int_{tau0}^{x0} phi with e^{psi~} = e^psi / phi.

    The metric is unchanged, so the spatial part becomes phi^2 sigma in the
    new chart.  ``x0_max`` bounds the quadrature grid when the model's range
    is unbounded above.
    """
    lo, hi = model.x0_range
    top = hi if x0_max is None else x0_max
    if not math.isfinite(top):
        raise ValueError("x0_max is required for models with an unbounded future end")
    if not (tau0 >= lo and tau0 < top) or top > hi:
        raise DomainError(f"[{tau0}, {top}] not inside {model.x0_range}")

    # Simpson needs an even number of intervals
    n_int = n_quad + (n_quad % 2)
    taus = np.linspace(tau0, top, n_int + 1)
    interior = taus.copy()
    # open range: keep the nodes strictly inside for evaluating the model
    interior[0] = np.nextafter(tau0, top) if tau0 == lo else tau0
    interior[-1] = np.nextafter(top, tau0) if top == hi else top
    phis = _evaluate_phi(phi, interior)
    if np.any(~(phis > 0)):
        raise NotPositive("phi must be positive on the reparameterization interval")

    xs = lattice_points(model, n_x)
    T = np.broadcast_to(interior[:, None], (len(interior), len(xs)))
    X = np.broadcast_to(xs[None], (len(interior), len(xs), model.d))
    sg = slice_geometry(model, T, X)
    eH = sg.conf * sg.Hbar
    if np.any(eH < phis[:, None] * (1.0 - 1e-10)):
        k = np.unravel_index(np.argmin(eH - phis[:, None]), eH.shape)
        raise BarrierViolated(
            f"e^psi Hbar = {eH[k]:.6g} < phi = {phis[k[0]]:.6g} at x0 = {interior[k[0]]:.6g}"
        )

    xt = cumulative_simpson(phis, x=taus, initial=0.0)
    fwd = PchipInterpolator(taus, xt, extrapolate=False)
    inv = PchipInterpolator(xt, taus, extrapolate=False)
    span = top - tau0

    def phi_prime(x0):
        if dphi is not None:
            return _evaluate_phi(dphi, x0)
        step = 1e-6 * span
        a = np.clip(x0 - step, interior[0], interior[-1])
        b = np.clip(x0 + step, interior[0], interior[-1])
        return (_evaluate_phi(phi, b) - _evaluate_phi(phi, a)) / (b - a)

    def old_time(xt_):
        x0 = inv(np.asarray(xt_, dtype=float))
        return np.clip(x0, interior[0], interior[-1])

    def psi(xt_, x):
        x0 = old_time(xt_)
        return model.psi(x0, x) - np.log(_evaluate_phi(phi, x0))

    def dpsi(xt_, x):
        x0 = old_time(xt_)
        p = _evaluate_phi(phi, x0)
        out = np.array(model.dpsi(x0, x), dtype=float)
        out[..., 0] = (out[..., 0] - phi_prime(x0) / p) / p
        return out

    def sigma(xt_, x):
        x0 = old_time(xt_)
        p = _evaluate_phi(phi, x0)
        return p[..., None, None] ** 2 * model.sigma(x0, x)

    def dsigma0(xt_, x):
        x0 = old_time(xt_)
        p = _evaluate_phi(phi, x0)[..., None, None]
        dp = phi_prime(x0)[..., None, None]
        return 2 * dp * model.sigma(x0, x) + p * model.dsigma0(x0, x)

    def dsigmak(xt_, x):
        x0 = old_time(xt_)
        p = _evaluate_phi(phi, x0)[..., None, None, None]
        return p**2 * model.dsigmak(x0, x)

    ricci = None
    if model.ricci_nu_nu is not None:
        def ricci(xt_, x, nu):
            x0 = old_time(xt_)
            nu_old = np.array(nu, dtype=float)
            nu_old[..., 0] = nu_old[..., 0] / _evaluate_phi(phi, x0)
            return model.ricci_nu_nu(x0, x, nu_old)

    new_hi = float(xt[-1])
    sample = None
    if model.sample_range is not None:
        a, b = model.sample_range
        a, b = max(a, tau0), min(b, top)
        if a < b:
            sample = (float(fwd(a)), float(fwd(b)))
    wrapped = SpacetimeModel(
        name=f"{model.name}~",
        d=model.d,
        x0_range=(0.0, new_hi),
        periods=model.periods,
        psi=psi, dpsi=dpsi, sigma=sigma, dsigma0=dsigma0, dsigmak=dsigmak,
        ricci_nu_nu=ricci,
        homogeneous=model.homogeneous,
        sample_range=sample,
        params={**model.params, "reparameterized_from": model.name, "tau0": tau0, "x0_max": top},
    )
    object.__setattr__(wrapped, "forward_time", fwd)
    object.__setattr__(wrapped, "inverse_time", old_time)
    return wrapped


def with_ricci(model: SpacetimeModel, ricci: Callable | None, name: str | None = None) -> SpacetimeModel:
    """Copy of ``model`` with a different (or no) closed-form Ricci contraction."""
    return replace(model, ricci_nu_nu=ricci, name=name or model.name)
