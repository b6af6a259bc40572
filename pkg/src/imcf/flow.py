"""Explicit time integration of the graph-gauge inverse mean curvature flow.

In graph gauge the flow is the scalar equation

    du/dt = e^{-psi(u, x)} v / H

with H the mean curvature of graph u w.r.t. the past-directed normal.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from . import analysis
from .errors import (
    DomainError,
    InitialDataInvalid,
    NonPositiveH,
    NotSpacelike,
    NumericalBlowup,
    ConfigError,
)
from .geometry import EPS_SPACE, GeometrySnapshot, GraphState, compute_geometry
from .grid import PeriodicGrid
from .spacetime import SpacetimeModel

log = logging.getLogger(__name__)

INTEGRATORS = ("euler", "rk2", "rk4")
# stop reasons that mean the run ended normally
CLEAN_STOPS = ("t_max", "domain_boundary")
MAX_DT_HALVINGS = 60


@dataclass(frozen=True)
class FlowConfig:
    t_max: float = 1.0
    cfl: float = 0.5
    fd_order: int = 2
    H_min_floor: float = 1e-8
    vtilde_abort: float = 1e6
    record_every: int = 1
    snapshot_every: float = math.inf
    integrator: str = "rk2"
    eps_space: float = EPS_SPACE
    residuals: bool = True

    def __post_init__(self):
        problems = []
        if not (0 < self.cfl <= 1):
            problems.append(f"flow.cfl must lie in (0, 1], got {self.cfl}")
        if not (self.t_max > 0):
            problems.append(f"flow.t_max must be positive, got {self.t_max}")
        if self.fd_order not in (2, 4):
            problems.append(f"flow.fd_order must be 2 or 4, got {self.fd_order}")
        if not (self.H_min_floor > 0):
            problems.append("flow.H_min_floor must be positive")
        if not (self.vtilde_abort > 1):
            problems.append("flow.vtilde_abort must exceed 1")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            problems.append("flow.record_every must be a positive integer")
        if not (self.snapshot_every > 0):
            problems.append("flow.snapshot_every must be positive")
        if self.integrator not in INTEGRATORS:
            problems.append(f"flow.integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if not (0 < self.eps_space < 1):
            problems.append("flow.eps_space must lie in (0, 1)")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class TraceRecord:
    t: float
    tau: float
    dt: float
    volume: float
    H_min: float
    H_max: float
    vtilde_max: float
    u_min: float
    u_max: float
    residual_g: float
    residual_Hinv: float


TRACE_COLUMNS = tuple(f.name for f in fields(TraceRecord))


@dataclass
class FlowTrace:
    grid: PeriodicGrid
    d: int
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (t, GraphState)
    c0: float = math.nan
    lifespan_c: float = math.nan
    stop_reason: str = ""
    n_steps: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def snapshot_at(self, t: float, atol: float = 1e-12) -> GraphState:
        for ts, state in self.snapshots:
            if abs(ts - t) <= atol * max(1.0, abs(t)):
                return state
        raise KeyError(f"no snapshot stored at t = {t}")

    @property
    def clean(self) -> bool:
        return self.stop_reason in CLEAN_STOPS


def stable_dt(snap: GeometrySnapshot, grid: PeriodicGrid, cfl: float) -> float:
    """Explicit stability limit for the principal part H^{-2} g^{ij} d_ij."""
    if not (cfl > 0):
        raise ValueError("cfl must be positive")
    if np.min(snap.H) <= 0:
        raise NonPositiveH(f"min H = {np.min(snap.H):.6g}")
    lam_max = snap.ginv[..., 0, 0] if grid.d == 1 else np.linalg.eigvalsh(snap.ginv)[..., -1]
    h_min = min(grid.spacing)
    return float(cfl * np.min(snap.H**2 / lam_max) * h_min**2 / (2 * grid.d))


def _speed(snap: GeometrySnapshot, H_floor: float) -> np.ndarray:
    H = snap.H
    if not np.all(np.isfinite(H)):
        raise NumericalBlowup("non-finite mean curvature")
    if np.min(H) <= H_floor:
        raise NonPositiveH(f"min H = {np.min(H):.6g} at or below floor {H_floor:g}")
    return snap.v / (snap.conf * H)


def step(
    model: SpacetimeModel,
    grid: PeriodicGrid,
    state: GraphState,
    dt: float,
    integrator: str = "rk2",
    *,
    fd_order: int = 2,
    H_floor: float = 1e-8,
    eps_space: float = EPS_SPACE,
    first: GeometrySnapshot | None = None,
) -> GraphState:
    """Advance the graph by one explicit Runge-Kutta step."""
    if integrator not in INTEGRATORS:
        raise ValueError(f"unknown integrator {integrator!r}")
    if dt == 0:
        return state

    def rhs(u, snap=None):
        if snap is None:
            snap = compute_geometry(model, grid, GraphState(state.t, u), fd_order, eps_space)
        return _speed(snap, H_floor)

    u = state.u
    k1 = rhs(u, first)
    if integrator == "euler":
        new = u + dt * k1
    elif integrator == "rk2":
        k2 = rhs(u + dt * k1)
        new = u + 0.5 * dt * (k1 + k2)
    else:
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        new = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise NumericalBlowup("non-finite graph after step")
    return GraphState(state.t + dt, new)


def _record(trace, t, dt, snap, residual_g, residual_Hinv):
    trace.records.append(
        TraceRecord(
            t=t,
            tau=analysis.tau_of_t(t, trace.d),
            dt=dt,
            volume=snap.volume,
            H_min=float(np.min(snap.H)),
            H_max=float(np.max(snap.H)),
            vtilde_max=float(np.max(snap.vtilde)),
            u_min=float(np.min(snap.u)),
            u_max=float(np.max(snap.u)),
            residual_g=residual_g,
            residual_Hinv=residual_Hinv,
        )
    )


def run(model: SpacetimeModel, grid: PeriodicGrid, u0: np.ndarray, config: FlowConfig) -> FlowTrace:
    """Integrate the flow from ``u0`` until ``t_max`` or a stop condition.

    Residual columns of record n use the last three computed hypersurfaces:
    ``residual_g`` the step ending at record n (forward quotient at its left
    end) and ``residual_Hinv`` the centred triple around the previous step.
    """
    if grid.d != model.d:
        raise ValueError(f"grid dimension {grid.d} != model dimension {model.d}")
    cfg = config
    state = GraphState(0.0, np.array(u0, dtype=float))
    try:
        snap = compute_geometry(model, grid, state, cfg.fd_order, cfg.eps_space)
    except (NotSpacelike, DomainError) as exc:
        raise InitialDataInvalid(f"InitialDataInvalid: {exc}") from exc
    if not np.min(snap.H) > 0:
        raise InitialDataInvalid(
            f"InitialDataInvalid: initial mean curvature not positive (min H = {np.min(snap.H):.6g})"
        )

    trace = FlowTrace(grid=grid, d=model.d)
    trace.c0 = float(np.min(snap.H))
    trace.lifespan_c = model.d / trace.c0
    trace.snapshots.append((0.0, state))
    _record(trace, 0.0, 0.0, snap, math.nan, math.nan)

    history = deque([(0.0, snap)], maxlen=3)
    next_snap_t = cfg.snapshot_every
    n = 0
    t = 0.0
    while True:
        if t >= cfg.t_max * (1 - 1e-14):
            trace.stop_reason = "t_max"
            break
        if np.min(snap.H) <= cfg.H_min_floor:
            trace.stop_reason = "H_floor"
            break
        if np.max(snap.vtilde) > cfg.vtilde_abort:
            trace.stop_reason = "vtilde_abort"
            break

        dt = stable_dt(snap, grid, cfg.cfl)
        target = min(cfg.t_max, next_snap_t)
        hit_target = t + dt >= target * (1 - 1e-14)
        if hit_target:
            dt = target - t

        new_state = new_snap = None
        for halvings in range(MAX_DT_HALVINGS):
            try:
                new_state = step(
                    model, grid, state, dt, cfg.integrator,
                    fd_order=cfg.fd_order, H_floor=cfg.H_min_floor,
                    eps_space=cfg.eps_space, first=snap,
                )
                new_snap = compute_geometry(model, grid, new_state, cfg.fd_order, cfg.eps_space)
                break
            except DomainError:
                # the future end lies inside this step; approach it geometrically
                dt *= 0.5
                hit_target = False
            except NotSpacelike:
                trace.stop_reason = "spacelike_margin"
                break
            except NonPositiveH:
                trace.stop_reason = "H_floor"
                break
        if new_snap is None or halvings > MAX_DT_HALVINGS // 2:
            trace.stop_reason = trace.stop_reason or "domain_boundary"
            break

        n += 1
        t = t + dt if not hit_target else target
        state = GraphState(t, new_state.u)
        snap = new_snap
        history.append((t, snap))

        is_snapshot = hit_target and target == next_snap_t
        if is_snapshot:
            trace.snapshots.append((t, state))
            next_snap_t += cfg.snapshot_every
        if n % cfg.record_every == 0 or hit_target:
            res_g = res_h = math.nan
            if cfg.residuals:
                (t0, s0), (t1, s1) = history[-2], history[-1]
                res_g = analysis.residual_metric_evolution(s0, s1, t1 - t0)
                if len(history) == 3:
                    res_h = analysis.residual_Hinv_evolution(
                        [s for _, s in history], [ts for ts, _ in history], model
                    )
            _record(trace, t, dt, snap, res_g, res_h)

    if trace.records[-1].t != t:
        _record(trace, t, trace.records[-1].dt, snap, math.nan, math.nan)
    if trace.snapshots[-1][0] != t:
        trace.snapshots.append((t, state))
    trace.n_steps = n
    log.info("flow stopped at t=%.6g after %d steps (%s)", t, n, trace.stop_reason)
    return trace
