"""Checkers, residual monitors, time functions and the homogeneous ODE oracle."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, quad, simpson, solve_ivp
from scipy.interpolate import PchipInterpolator

from .errors import (
    DomainError,
    NonPositiveH,
    NotPositive,
    OraclePrecondition,
    OutOfFoliation,
    RangeError,
    StiffnessFailure,
    Unbounded,
)
from .grid import fd_gradient, laplace_beltrami
from .spacetime import (
    SpacetimeModel,
    ambient_ricci_contraction,
    lattice_points,
    slice_geometry,
)


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_value: float
    worst_location: tuple | None
    samples: int
    tolerance: float
    seed: int | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = _plain(asdict(self))
        out["passed"] = bool(self.passed)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst={self.worst_value:.6g} tol={self.tolerance:.3g}"


def _plain(obj):
    """Convert numpy scalars and arrays into JSON-friendly Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class DecayProfile:
    tau_samples: np.ndarray
    inf_eH: np.ndarray
    phi: np.ndarray
    partial_integrals: np.ndarray


# --- time function tau ---------------------------------------------------------


def tau_of_t(t: float, d: int) -> float:
    if t < 0:
        raise RangeError(f"t must be non-negative, got {t}")
    return -math.expm1(-t / d)


def t_of_tau(tau: float, d: int) -> float:
    if not 0 <= tau < 1:
        raise RangeError(f"tau must lie in [0, 1), got {tau}")
    return -d * math.log1p(-tau)


# --- model-level checkers ------------------------------------------------------


def _random_points(model: SpacetimeModel, n: int, rng: np.random.Generator):
    lo, hi = model.time_samples_range
    x0 = rng.uniform(lo, hi, n)
    x = rng.uniform(0, 1, (n, model.d)) * np.asarray(model.periods)
    return x0, x


def random_unit_timelike(model: SpacetimeModel, x0, x, rng: np.random.Generator, max_speed=0.9):
    """Unit future-directed timelike vectors (1, w)/norm with |w|_sigma < max_speed."""
    n = len(x0)
    sig = model.sigma(x0, x)
    L = np.linalg.cholesky(sig)
    direction = rng.normal(size=(n, model.d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    speed = rng.uniform(0, max_speed, n)
    # w with sigma(w, w) = speed^2: solve L^T w = speed * direction
    w = np.linalg.solve(np.swapaxes(L, -1, -2), (speed[:, None] * direction)[..., None])[..., 0]
    nu = np.concatenate([np.ones((n, 1)), w], axis=1)
    norm2 = model.norm2(x0, x, nu)
    return nu / np.sqrt(-norm2)[:, None]


def check_timelike_convergence(
    model: SpacetimeModel, n_samples: int = 1000, seed: int = 0, tol: float = 1e-8
) -> CheckReport:
    rng = np.random.default_rng(seed)
    x0, x = _random_points(model, n_samples, rng)
    nu = random_unit_timelike(model, x0, x, rng)
    vals = ambient_ricci_contraction(model, x0, x, nu)
    k = int(np.argmin(vals))
    worst = float(vals[k])
    return CheckReport(
        name="timelike_convergence",
        passed=worst >= -tol,
        worst_value=worst,
        worst_location=(float(x0[k]), x[k].tolist()),
        samples=n_samples,
        tolerance=tol,
        seed=seed,
        details={"max_value": float(np.max(vals))},
    )


def probe_mean_curvature_barrier(
    model: SpacetimeModel,
    x0_sequence: Sequence[float],
    threshold: float = 100.0,
    n_x: int = 8,
) -> CheckReport:
    """Inf of the slice mean curvature along coordinate slices approaching the future end.

    Passes when the last value exceeds ``threshold`` and the profile is
    strictly increasing after its last non-positive entry.
    """
    seq = np.asarray(x0_sequence, dtype=float)
    if np.any(np.diff(seq) <= 0):
        raise ValueError("x0_sequence must be strictly increasing")
    xs = lattice_points(model, n_x)
    T = np.broadcast_to(seq[:, None], (len(seq), len(xs)))
    X = np.broadcast_to(xs[None], (len(seq), len(xs), model.d))
    inf_H = slice_geometry(model, T, X).Hbar.min(axis=1)
    nonpos = np.nonzero(inf_H <= 0)[0]
    start = nonpos[-1] + 1 if len(nonpos) else 0
    tail = inf_H[start:]
    monotone = len(tail) >= 2 and bool(np.all(np.diff(tail) > 0))
    last = float(inf_H[-1])
    return CheckReport(
        name="mean_curvature_barrier",
        passed=bool(monotone and last > threshold),
        worst_value=last,
        worst_location=(float(seq[-1]),),
        samples=len(seq) * len(xs),
        tolerance=threshold,
        details={"x0": seq, "inf_Hbar": inf_H, "crossover_index": int(start), "monotone": monotone},
    )


def conformal_mean_curvature(model: SpacetimeModel, taus, xs) -> np.ndarray:
    """e^psi Hbar on the product of time samples and spatial samples."""
    taus = np.asarray(taus, dtype=float)
    T = np.broadcast_to(taus[:, None], (len(taus), len(xs)))
    X = np.broadcast_to(xs[None], (len(taus), len(xs), model.d))
    sg = slice_geometry(model, T, X)
    return sg.conf * sg.Hbar


def measured_phi(model: SpacetimeModel, n_x: int = 8, scale: float = 1.0) -> Callable:
    """phi(tau) = scale * inf_x e^psi Hbar(tau, x), evaluated on a spatial lattice."""
    xs = lattice_points(model, n_x)

    def phi(tau):
        tau = np.asarray(tau, dtype=float)
        flat = conformal_mean_curvature(model, tau.ravel(), xs).min(axis=1)
        return scale * flat.reshape(tau.shape)

    return phi


def check_strong_volume_decay(
    model: SpacetimeModel,
    tau0: float,
    b: float,
    phi: Callable,
    n_tau: int = 257,
    n_x: int = 8,
    tol: float = 1e-10,
    analytic_divergence: bool = False,
) -> tuple[CheckReport, DecayProfile]:
    """Pointwise test of e^psi Hbar >= phi on [tau0, b) with partial integrals of phi.

    Divergence of the integral of phi cannot be decided numerically; the
    report carries the growth of the partial integrals and echoes the
    ``analytic_divergence`` flag.
    """
    lo, hi = model.x0_range
    taus = np.linspace(tau0, b, n_tau, endpoint=False)
    if taus[0] <= lo:
        taus[0] = np.nextafter(lo, hi)
    phis = np.broadcast_to(np.asarray(phi(taus), dtype=float), taus.shape)
    if np.any(~(phis > 0)):
        raise NotPositive("phi must be positive at every sample")
    xs = lattice_points(model, n_x)
    eH = conformal_mean_curvature(model, taus, xs)
    margin = eH - phis[:, None]
    k = np.unravel_index(np.argmin(margin), margin.shape)
    inf_eH = eH.min(axis=1)
    partial = cumulative_simpson(phis, x=taus, initial=0.0) if len(taus) > 2 else np.zeros_like(taus)
    profile = DecayProfile(taus, inf_eH, np.array(phis), partial)
    worst = float(margin[k])
    report = CheckReport(
        name="strong_volume_decay",
        passed=worst >= -tol,
        worst_value=worst,
        worst_location=(float(taus[k[0]]), xs[k[1]].tolist()),
        samples=int(margin.size),
        tolerance=tol,
        details={
            "partial_integral_end": float(partial[-1]),
            "partial_integral_growth": float(partial[-1] - partial[len(partial) // 2]),
            "analytic_divergence": bool(analytic_divergence),
        },
    )
    return report, profile


def volume_identity_residual(
    model: SpacetimeModel,
    tau0: float,
    tau: float,
    x_samples: np.ndarray | None = None,
    n_quad: int = 4096,
    tol: float = 1e-6,
) -> CheckReport:
    """Compare log g(tau0, x) - log g(tau, x) with the integral of 2 e^psi Hbar.

    The literal form without the factor 2 is evaluated as well and reported
    in ``details``.
    """
    model.require_domain(np.array([tau0, tau]))
    xs = lattice_points(model, 4) if x_samples is None else np.atleast_2d(x_samples)
    n_int = n_quad + (n_quad % 2)

    def log_det(t):
        T = np.full(len(xs), t)
        psi = model.psi(T, xs)
        sign, logdet = np.linalg.slogdet(model.sigma(T, xs))
        return 2 * model.d * psi + logdet

    lhs = log_det(tau0) - log_det(tau)
    if tau == tau0:
        rhs = np.zeros(len(xs))
    else:
        s = np.linspace(tau0, tau, n_int + 1)
        eH = conformal_mean_curvature(model, s, xs)
        rhs = simpson(2.0 * eH, x=s, axis=0)

    def rel(a, b):
        scale = np.maximum(np.abs(a), 1e-300)
        return np.where(np.abs(a) > 0, np.abs(a - b) / scale, np.abs(a - b))

    corrected = rel(lhs, rhs)
    literal = rel(lhs, 0.5 * rhs)
    k = int(np.argmax(corrected))
    worst = float(corrected[k])
    return CheckReport(
        name="volume_identity",
        passed=worst <= tol,
        worst_value=worst,
        worst_location=(float(tau), xs[k].tolist()),
        samples=len(xs),
        tolerance=tol,
        details={
            "lhs": lhs,
            "rhs_factor2": rhs,
            "literal_form_residual": float(np.max(literal)),
        },
    )


# --- evolution-equation residuals ----------------------------------------------


def tangential_velocity(snap) -> np.ndarray:
    """Spatial coordinate velocity W^i of the normal flow x' = -H^{-1} nu."""
    return -snap.nu[..., 1:] / snap.H[..., None]


def lie_derivative_metric(snap) -> np.ndarray:
    """(L_W g)_ij = W^k d_k g_ij + g_kj d_i W^k + g_ik d_j W^k."""
    grid, order = snap.grid, snap.fd_order
    W = tangential_velocity(snap)
    dg = fd_gradient(snap.g, grid, order)  # [k, i, j]
    dW = fd_gradient(W, grid, order)  # [i, k] = d_i W^k
    transport = np.einsum("...k,...kij->...ij", W, dg)
    stretch = np.einsum("...kj,...ik->...ij", snap.g, dW)
    return transport + stretch + np.swapaxes(stretch, -1, -2)


def residual_metric_evolution(snap_t, snap_tdt, dt: float) -> float:
    """Max-norm residual of g' = -2 H^{-1} h along the normal flow.

    The graph-gauge difference quotient at fixed grid points is converted to
    the normal-flow derivative by adding the Lie derivative along W; all
    right-hand-side terms use the left snapshot (first-order quotient).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dgdt = (snap_tdt.g - snap_t.g) / dt
    res = dgdt + lie_derivative_metric(snap_t) + 2.0 * snap_t.h / snap_t.H[..., None, None]
    return float(np.max(np.abs(res)))


def residual_Hinv_evolution(snaps: Sequence, times: Sequence[float], model: SpacetimeModel) -> float:
    """Max-norm residual of the H^{-1} evolution at the middle of three snapshots.

    (H^{-1})' - H^{-2} Lap H^{-1} + H^{-2} (|A|^2 + Ric(nu, nu)) H^{-1}, where
    the total derivative is d_t H^{-1} at fixed x (three-point, non-uniform)
    plus W^k d_k H^{-1}.
    """
    s0, s1, s2 = snaps
    t0, t1, t2 = times
    a, b = t1 - t0, t2 - t1
    f0, f1, f2 = 1.0 / s0.H, 1.0 / s1.H, 1.0 / s2.H
    dfdt = (-b / (a * (a + b))) * f0 + ((b - a) / (a * b)) * f1 + (a / (b * (a + b))) * f2
    grid, order = s1.grid, s1.fd_order
    W = tangential_velocity(s1)
    df = fd_gradient(f1, grid, order)
    total = dfdt + np.einsum("...k,...k->...", W, df)
    lap = laplace_beltrami(f1, grid, s1.ginv, s1.gamma, order)
    ric = ambient_ricci_contraction(model, s1.u, grid.points(), s1.nu)
    Hm2 = f1 * f1
    res = total - Hm2 * lap + Hm2 * (s1.normA2 + ric) * f1
    return float(np.max(np.abs(res)))


# --- trace-level checks ----------------------------------------------------------


def check_volume_law(trace, tol: float = 1e-3) -> CheckReport:
    t = trace.column("t")
    vol = trace.column("volume")
    dev = np.abs(vol / vol[0] - np.exp(-t))
    k = int(np.argmax(dev))
    return CheckReport("volume_law", bool(dev[k] <= tol), float(dev[k]), (float(t[k]),), len(t), tol)


def check_tau_law(trace, tol: float = 1e-3) -> CheckReport:
    tau = trace.column("tau")
    vol = trace.column("volume")
    dev = np.abs(vol - vol[0] * (1 - tau) ** trace.d) / vol[0]
    k = int(np.argmax(dev))
    return CheckReport("tau_law", bool(dev[k] <= tol), float(dev[k]), (float(tau[k]),), len(tau), tol)


def check_curvature_growth(trace, factor: float = 0.99) -> CheckReport:
    """H_min(t) e^{-t/d} >= factor * H_min(0) at every record."""
    t = trace.column("t")
    Hmin = trace.column("H_min")
    ratio = Hmin * np.exp(-t / trace.d) / Hmin[0]
    k = int(np.argmin(ratio))
    return CheckReport(
        "curvature_growth", bool(ratio[k] >= factor), float(ratio[k]), (float(t[k]),), len(t), factor
    )


def check_monotone_graph(trace) -> CheckReport:
    u_min = trace.column("u_min")
    t = trace.column("t")
    inc = np.diff(u_min)
    worst = float(np.min(inc)) if len(inc) else 0.0
    ok = bool(np.all(inc > 0) and np.all(np.diff(t) > 0))
    return CheckReport("monotone_u_min", ok, worst, None, len(t), 0.0)


def check_gauge_bound(trace, tol: float = 1e-6) -> CheckReport:
    """u_max(t) <= u_max(0) + t, valid once e^psi Hbar >= 1 holds."""
    t = trace.column("t")
    u_max = trace.column("u_max")
    excess = u_max - (u_max[0] + t)
    k = int(np.argmax(excess))
    return CheckReport("gauge_bound", bool(excess[k] <= tol), float(excess[k]), (float(t[k]),), len(t), tol)


# --- lifespan --------------------------------------------------------------------


def _proper_length(model: SpacetimeModel, x_start, u_start, w, upper, epsabs=1e-14, epsrel=1e-12):
    w = np.asarray(w, dtype=float)
    x_start = np.asarray(x_start, dtype=float)

    def integrand(s):
        x = x_start + w * (s - u_start)
        s_arr = np.asarray(s)
        speed2 = float(np.einsum("i,ij,j->", w, model.sigma(s_arr, x), w))
        return math.exp(float(model.psi(s_arr, x))) * math.sqrt(max(0.0, 1.0 - speed2))

    val, err, info = quad(integrand, u_start, upper, epsabs=epsabs, epsrel=epsrel, limit=500,
                          full_output=True)[:3]
    if not math.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
        raise Unbounded(f"proper-time quadrature did not converge (value {val:.3g}, error {err:.3g})")
    return val


def lifespan_bound_check(
    model: SpacetimeModel,
    trace,
    t_eval: float,
    n_curves: int = 16,
    seed: int = 0,
    tol: float = 1e-3,
    max_speed: float = 0.9,
) -> CheckReport:
    """Lengths of future-directed straight coordinate curves from M(t_eval) against c (1 - tau).

    Half of the curves are x = const lines through evenly spaced grid points,
    the rest are tilted timelike lines with random direction and speed.
    """
    state = trace.snapshot_at(t_eval)
    grid = trace.grid
    c = model.d / trace.c0
    tau = tau_of_t(t_eval, model.d)
    bound = c * (1 - tau)
    upper = model.x0_range[1]
    rng = np.random.default_rng(seed)
    u = state.u.ravel()
    pts = grid.points().reshape(-1, grid.d)

    n_vert = max(1, n_curves // 2)
    vert_idx = np.linspace(0, len(u) - 1, n_vert).round().astype(int)
    lengths, kinds = [], []
    for i in vert_idx:
        lengths.append(_proper_length(model, pts[i], u[i], np.zeros(grid.d), upper))
        kinds.append("vertical")
    for _ in range(n_curves - n_vert):
        i = int(rng.integers(len(u)))
        direction = rng.normal(size=grid.d)
        direction /= np.linalg.norm(direction)
        sig = model.sigma(np.asarray(u[i]), pts[i])
        speed = rng.uniform(0.05, max_speed)
        w = speed * direction / math.sqrt(float(direction @ sig @ direction))
        lengths.append(_proper_length(model, pts[i], u[i], w, upper))
        kinds.append("tilted")
    lengths = np.array(lengths)
    ratio = float(np.max(lengths) / bound)
    vertical_max = float(np.max(lengths[np.array(kinds) == "vertical"]))
    tilted = lengths[np.array(kinds) == "tilted"]
    return CheckReport(
        name="lifespan_bound",
        passed=bool(np.max(lengths) <= bound * (1 + tol)),
        worst_value=ratio,
        worst_location=(float(t_eval),),
        samples=len(lengths),
        tolerance=tol,
        seed=seed,
        details={
            "c": c,
            "tau": tau,
            "bound": bound,
            "max_length": float(np.max(lengths)),
            "max_vertical": vertical_max,
            "max_tilted": float(np.max(tilted)) if len(tilted) else math.nan,
        },
    )


# --- time function from a trace ---------------------------------------------------


def _periodic_interp(field_values: np.ndarray, grid, x) -> float:
    """Multilinear interpolation of a grid field at a spatial point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    idx_f = (x % np.asarray(grid.periods)) / np.asarray(grid.spacing)
    base = np.floor(idx_f).astype(int)
    frac = idx_f - base
    total = 0.0
    for corner in range(2**grid.d):
        bits = [(corner >> k) & 1 for k in range(grid.d)]
        weight = 1.0
        index = []
        for k, bit in enumerate(bits):
            weight *= frac[k] if bit else 1 - frac[k]
            index.append((base[k] + bit) % grid.shape[k])
        total += weight * field_values[tuple(index)]
    return float(total)


def time_function_lookup(trace, event) -> float:
    """Flow parameter t of the leaf through ``event = (x0, x)``."""
    x0, x = event
    ts = np.array([t for t, _ in trace.snapshots])
    us = np.array([_periodic_interp(s.u, trace.grid, x) for _, s in trace.snapshots])
    if x0 < us[0] or x0 > us[-1]:
        raise OutOfFoliation(f"event x0={x0} outside stored leaves [{us[0]:.6g}, {us[-1]:.6g}] at x={x}")
    if np.any(np.diff(us) <= 0):
        raise ValueError("stored leaves are not strictly increasing at this point")
    if len(ts) == 2:
        return float(np.interp(x0, us, ts))
    return float(PchipInterpolator(us, ts)(x0))


# --- homogeneous ODE oracle -------------------------------------------------------


@dataclass
class OracleSolution:
    """Dense trajectory u(t) of the homogeneous flow on [0, t_end]."""

    t_end: float
    reached_boundary: bool
    _sol: object

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_end * (1 + 1e-12)):
            raise RangeError(f"oracle defined on [0, {self.t_end}]")
        return self._sol(t)[0]


def homogeneous_oracle(
    model: SpacetimeModel,
    u0: float,
    t_max: float,
    tol: float = 1e-10,
    boundary_margin: float = 0.0,
) -> OracleSolution:
    """Solve du/dt = e^{-psi(u)} / Hbar(u) with an adaptive Dormand-Prince 8(5,3) pair."""
    if not model.homogeneous:
        raise OraclePrecondition(f"model {model.name!r} is not spatially homogeneous")
    x_ref = np.zeros(model.d)

    def speed(u):
        sg = slice_geometry(model, np.asarray(u), x_ref)
        return 1.0 / (float(sg.conf) * float(sg.Hbar))

    model.require_domain(u0)
    if not slice_geometry(model, np.asarray(u0), x_ref).Hbar > 0:
        raise NonPositiveH(f"slice mean curvature not positive at u0={u0}")

    lo, hi = model.x0_range
    stop_at = hi - boundary_margin

    inner_lo = np.nextafter(lo, hi) if math.isfinite(lo) else lo
    inner_hi = np.nextafter(hi, lo) if math.isfinite(hi) else hi

    def rhs(t, y):
        # trial stages may overshoot the terminal event; evaluate them at the edge
        if not math.isfinite(y[0]):
            raise DomainError("oracle state is not finite")
        return [speed(min(max(y[0], inner_lo), inner_hi))]

    def hit_boundary(t, y):
        return stop_at - y[0] - 1e-12 * max(1.0, abs(stop_at)) if math.isfinite(stop_at) else 1.0

    hit_boundary.terminal = True
    hit_boundary.direction = -1
    try:
        sol = solve_ivp(
            rhs, (0.0, t_max), [u0], method="DOP853", rtol=tol, atol=tol,
            dense_output=True, events=hit_boundary,
        )
    except DomainError as exc:
        raise StiffnessFailure(f"oracle step left the domain: {exc}") from exc
    if sol.status == -1:
        raise StiffnessFailure(sol.message)
    return OracleSolution(t_end=float(sol.t[-1]), reached_boundary=sol.status == 1, _sol=sol.sol)
