import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imcf.analysis import (
    CheckReport,
    check_curvature_growth,
    check_monotone_graph,
    check_strong_volume_decay,
    check_tau_law,
    check_timelike_convergence,
    check_volume_law,
    conformal_mean_curvature,
    homogeneous_oracle,
    lifespan_bound_check,
    measured_phi,
    probe_mean_curvature_barrier,
    random_unit_timelike,
    residual_Hinv_evolution,
    residual_metric_evolution,
    t_of_tau,
    tangential_velocity,
    tau_of_t,
    time_function_lookup,
    volume_identity_residual,
)
from imcf.errors import NotPositive, OraclePrecondition, OutOfFoliation, RangeError
from imcf.flow import FlowConfig, run, step
from imcf.geometry import GraphState, compute_geometry
from imcf.grid import PeriodicGrid
from imcf.spacetime import (
    lattice_points,
    make_exp_rw,
    make_minkowski_slab,
    make_sads_interior,
    reparameterize,
    with_ricci,
)

from conftest import line

SADS_CROSSOVER = 1 - 1 / math.sqrt(2)


@pytest.fixture(scope="module")
def sads():
    return make_sads_interior()


@pytest.fixture(scope="module")
def homogeneous_trace():
    return run(make_exp_rw(), line(32), np.zeros(32), FlowConfig(t_max=3.0, snapshot_every=1.0))


# --- time function ---


def test_tau_values():
    assert tau_of_t(math.log(2), 1) == pytest.approx(0.5, abs=1e-15)
    assert tau_of_t(0.0, 3) == 0.0
    assert tau_of_t(2 * math.log(2), 2) == pytest.approx(0.5, abs=1e-15)


@given(st.floats(0.0, 1.0, exclude_max=True), st.integers(1, 4))
def test_tau_round_trip(tau, d):
    assert tau_of_t(t_of_tau(tau, d), d) == pytest.approx(tau, abs=1e-12)


@given(st.floats(0.0, 1.0), st.integers(1, 4))
def test_t_round_trip(s, d):
    # 1 - tau = e^{-t/d} carries relative error eps, so t is recovered to about eps e^{t/d}
    t = 5.0 * d * s
    assert t_of_tau(tau_of_t(t, d), d) == pytest.approx(t, abs=1e-12)


def test_tau_range_errors():
    with pytest.raises(RangeError):
        tau_of_t(-1e-3, 1)
    with pytest.raises(RangeError):
        t_of_tau(1.0, 1)
    with pytest.raises(RangeError):
        t_of_tau(-0.1, 1)


# --- model checkers ---


def test_random_timelike_vectors_are_unit(sads):
    rng = np.random.default_rng(3)
    x0 = rng.uniform(0.1, 0.9, 50)
    x = rng.uniform(0, 6, (50, 2))
    nu = random_unit_timelike(sads, x0, x, rng)
    np.testing.assert_allclose(sads.norm2(x0, x, nu), -1.0, atol=1e-12)
    assert np.all(nu[:, 0] > 0)


def test_timelike_convergence_minkowski():
    rep = check_timelike_convergence(make_minkowski_slab(2), n_samples=200, seed=1)
    assert rep.passed and rep.worst_value == 0.0


def test_timelike_convergence_sads(sads):
    # vacuum with Ric = 2 Lambda g in three dimensions, so Ric(nu, nu) = 2 for unit nu
    rep = check_timelike_convergence(sads, n_samples=500, seed=2)
    assert rep.passed
    assert rep.worst_value == pytest.approx(2.0, abs=1e-9)
    assert rep.details["max_value"] == pytest.approx(2.0, abs=1e-9)


def test_timelike_convergence_detects_violation(sads):
    flipped = with_ricci(sads, lambda x0, x, nu: -sads.ricci_nu_nu(x0, x, nu), name="flipped")
    rep = check_timelike_convergence(flipped, n_samples=100, seed=2)
    assert not rep.passed
    assert rep.worst_value == pytest.approx(-2.0, abs=1e-9)


def test_timelike_convergence_exp_rw_matches_formula():
    # Ric_ij = (d-1) lam^2 delta_ij, Ric_00 = 0; for unit nu this is (d-1) lam^2 |nu_x|^2
    lam, d = 0.7, 3
    rep = check_timelike_convergence(make_exp_rw(lam, d), n_samples=300, seed=5)
    assert rep.passed and rep.worst_value >= 0


def test_barrier_exp_rw():
    rep = probe_mean_curvature_barrier(make_exp_rw(), np.arange(0.0, 11.0))
    assert rep.passed
    assert rep.worst_value == pytest.approx(math.exp(10.0), rel=1e-12)


def test_barrier_minkowski_fails():
    rep = probe_mean_curvature_barrier(make_minkowski_slab(1), np.linspace(-0.9, 0.9, 10))
    assert not rep.passed and rep.worst_value == 0.0


def test_barrier_sads(sads):
    lo, hi = sads.x0_range
    seq = 0.5 + (hi - 0.5) * (1 - 0.5 ** np.arange(1, 16))
    rep = probe_mean_curvature_barrier(sads, seq)
    assert rep.passed and rep.details["monotone"]
    full = probe_mean_curvature_barrier(sads, np.linspace(0.05, hi - 1e-3, 40))
    assert full.passed
    x0 = full.details["x0"]
    assert x0[full.details["crossover_index"]] > SADS_CROSSOVER
    assert x0[full.details["crossover_index"] - 1] < SADS_CROSSOVER


def test_barrier_requires_increasing_sequence():
    with pytest.raises(ValueError):
        probe_mean_curvature_barrier(make_exp_rw(), [1.0, 0.5])


def test_conformal_mean_curvature_exp_rw():
    model = make_exp_rw(0.5, 2)
    vals = conformal_mean_curvature(model, np.linspace(-1, 3, 7), lattice_points(model, 3))
    np.testing.assert_allclose(vals, 1.0, rtol=1e-14)


def test_measured_phi_on_sads(sads):
    phi = measured_phi(sads)
    # Hbar changes sign at the crossover time, where the conformal factor is finite
    assert abs(phi(SADS_CROSSOVER)) < 1e-12
    # with f~ = 1 - r^2 the slice r = const has e^psi Hbar = 1/r - r/f~; r = 1/2 gives 4/3
    assert phi(0.5) == pytest.approx(4 / 3, rel=1e-7)
    assert measured_phi(sads, scale=0.5)(0.5) == pytest.approx(2 / 3, rel=1e-7)


def test_strong_decay_exp_rw_tight():
    model = make_exp_rw()
    rep, prof = check_strong_volume_decay(model, 0.0, 5.0, lambda tau: np.ones_like(tau), n_tau=101)
    assert rep.passed
    assert rep.worst_value == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(prof.partial_integrals, prof.tau_samples - 0.0, atol=1e-12)
    assert rep.details["partial_integral_growth"] > 2.4


def test_strong_decay_exp_rw_too_strong():
    rep, _ = check_strong_volume_decay(make_exp_rw(), 0.0, 5.0, lambda tau: 2.0 + 0 * tau)
    assert not rep.passed and rep.worst_value == pytest.approx(-1.0, abs=1e-14)


def test_strong_decay_requires_positive_phi():
    with pytest.raises(NotPositive):
        check_strong_volume_decay(make_exp_rw(), 0.0, 1.0, lambda tau: 0 * tau)


def test_strong_decay_sads_measured(sads):
    hi = sads.x0_range[1]
    tau0 = SADS_CROSSOVER + 0.02
    rep, prof = check_strong_volume_decay(sads, tau0, hi, measured_phi(sads, scale=0.5))
    assert rep.passed and rep.worst_value > 0
    assert np.all(np.diff(prof.partial_integrals) > 0)
    assert rep.details["analytic_divergence"] is False


def test_volume_identity_exp_rw():
    for lam, d in [(1.0, 1), (0.5, 2)]:
        rep = volume_identity_residual(make_exp_rw(lam, d), 0.0, 2.0)
        assert rep.passed and rep.worst_value < 1e-12
        np.testing.assert_allclose(rep.details["lhs"], 2 * d * lam * 2.0, rtol=1e-13)
        assert rep.details["literal_form_residual"] == pytest.approx(0.5, abs=1e-12)


def test_volume_identity_trivial_interval():
    rep = volume_identity_residual(make_exp_rw(), 1.0, 1.0)
    assert rep.passed and rep.worst_value == 0.0


def test_volume_identity_sads(sads):
    rep = volume_identity_residual(sads, 0.35, 0.8)
    assert rep.passed and rep.worst_value < 1e-8


# --- residual monitors ---


def test_tangential_velocity_vanishes_on_homogeneous_graph():
    snap = compute_geometry(make_exp_rw(), line(16), GraphState(0.0, np.full(16, 0.3)))
    assert np.max(np.abs(tangential_velocity(snap))) == 0.0


def _metric_residual(model, grid, u0, dt, fd_order=2):
    s0 = GraphState(0.0, u0)
    s1 = step(model, grid, s0, dt, "rk4", fd_order=fd_order)
    g0 = compute_geometry(model, grid, s0, fd_order)
    g1 = compute_geometry(model, grid, s1, fd_order)
    return residual_metric_evolution(g0, g1, dt)


def test_metric_residual_first_order_homogeneous():
    model = make_sads_interior()
    grid = PeriodicGrid((8, 8), (2 * math.pi, 2 * math.pi))
    u0 = np.full(grid.shape, 0.5)
    r = [_metric_residual(model, grid, u0, dt) for dt in (4e-3, 2e-3, 1e-3)]
    assert r[0] / r[1] == pytest.approx(2.0, rel=0.05)
    assert r[1] / r[2] == pytest.approx(2.0, rel=0.05)


def test_metric_residual_perturbed_small():
    g = line(128)
    u0 = 0.2 * np.sin(g.points()[..., 0])
    assert _metric_residual(make_exp_rw(), g, u0, 1e-4, fd_order=4) < 1e-3


def test_metric_residual_rejects_bad_dt():
    snap = compute_geometry(make_exp_rw(), line(8), GraphState(0.0, np.zeros(8)))
    with pytest.raises(ValueError):
        residual_metric_evolution(snap, snap, 0.0)


def test_Hinv_residual_homogeneous():
    model, grid, dt = make_exp_rw(), line(16), 1e-3
    states = [GraphState(0.0, np.zeros(16))]
    for _ in range(2):
        states.append(step(model, grid, states[-1], dt, "rk4"))
    snaps = [compute_geometry(model, grid, s) for s in states]
    assert residual_Hinv_evolution(snaps, [s.t for s in states], model) <= 1e-4


def test_Hinv_residual_perturbed_nonuniform_times():
    model, grid = make_exp_rw(), line(128)
    u0 = 0.2 * np.sin(grid.points()[..., 0])
    s0 = GraphState(0.0, u0)
    s1 = step(model, grid, s0, 1e-4, "rk4", fd_order=4)
    s2 = step(model, grid, s1, 2e-4, "rk4", fd_order=4)
    snaps = [compute_geometry(model, grid, s, 4) for s in (s0, s1, s2)]
    assert residual_Hinv_evolution(snaps, [0.0, 1e-4, 3e-4], model) <= 1e-3


# --- trace checks ---


def test_trace_checks_on_homogeneous_run(homogeneous_trace):
    for check in (check_volume_law, check_tau_law):
        rep = check(homogeneous_trace)
        assert rep.passed and rep.worst_value <= 1e-6
    growth = check_curvature_growth(homogeneous_trace)
    assert growth.passed and growth.worst_value == pytest.approx(1.0, abs=1e-6)
    assert check_monotone_graph(homogeneous_trace).passed


def test_trace_checks_detect_tampering(homogeneous_trace):
    tr = replace(homogeneous_trace, records=list(homogeneous_trace.records))
    last = tr.records[-1]
    tr.records[-1] = replace(last, volume=2 * last.volume, u_min=tr.records[-2].u_min, H_min=0.5)
    assert not check_volume_law(tr).passed
    assert not check_tau_law(tr).passed
    assert not check_monotone_graph(tr).passed
    assert not check_curvature_growth(tr).passed


# --- lifespan ---


@pytest.mark.parametrize("t_eval", [0.0, 1.0, 2.0])
def test_lifespan_tight_on_homogeneous_run(homogeneous_trace, t_eval):
    rep = lifespan_bound_check(make_exp_rw(), homogeneous_trace, t_eval, n_curves=6, seed=1)
    # vertical curves have length e^{-t}, which is exactly c (1 - tau)
    assert rep.passed
    assert rep.worst_value == pytest.approx(1.0, abs=1e-6)
    assert rep.details["bound"] == pytest.approx(math.exp(-t_eval), rel=1e-12)
    assert rep.details["max_tilted"] < rep.details["max_vertical"]


def test_lifespan_needs_snapshot(homogeneous_trace):
    with pytest.raises(KeyError):
        lifespan_bound_check(make_exp_rw(), homogeneous_trace, 0.5)


# --- time function lookup ---


def test_time_function_lookup(homogeneous_trace):
    assert time_function_lookup(homogeneous_trace, (0.5, [1.0])) == pytest.approx(0.5, abs=1e-9)
    vals = [time_function_lookup(homogeneous_trace, (x0, [2.0])) for x0 in np.linspace(0, 3, 13)]
    assert np.all(np.diff(vals) > 0)
    with pytest.raises(OutOfFoliation):
        time_function_lookup(homogeneous_trace, (3.5, [0.0]))
    with pytest.raises(OutOfFoliation):
        time_function_lookup(homogeneous_trace, (-0.1, [0.0]))


# --- homogeneous oracle ---


@pytest.mark.parametrize("lam,d", [(1.0, 1), (0.5, 2), (0.25, 2), (2.0, 3)])
def test_oracle_exp_rw_linear(lam, d):
    # e^psi Hbar = d lam, so u(t) = u0 + t / (d lam)
    sol = homogeneous_oracle(make_exp_rw(lam, d), 0.3, 3.0)
    t = np.linspace(0, 3, 31)
    np.testing.assert_allclose(sol(t), 0.3 + t / (d * lam), atol=1e-10)
    assert not sol.reached_boundary and sol.t_end == 3.0


def test_oracle_sads_tolerances_agree(sads):
    a = homogeneous_oracle(sads, 0.5, 2.0, tol=1e-8)
    b = homogeneous_oracle(sads, 0.5, 2.0, tol=1e-10)
    t = np.linspace(0, 2, 41)
    assert np.max(np.abs(a(t) - b(t))) <= 1e-7
    assert np.all(np.diff(b(t)) > 0)


def test_oracle_stops_at_boundary():
    model = make_sads_interior(eps=0.3)
    sol = homogeneous_oracle(model, 0.4, 100.0)
    assert sol.reached_boundary and sol.t_end < 100.0
    assert sol(sol.t_end) == pytest.approx(model.x0_range[1], abs=1e-8)
    with pytest.raises(RangeError):
        sol(sol.t_end + 1.0)


def test_oracle_preconditions(sads):
    with pytest.raises(OraclePrecondition):
        homogeneous_oracle(replace(sads, homogeneous=False), 0.5, 1.0)


# --- reports ---


def test_reparameterized_sads_conformal_bound(sads):
    hi = sads.x0_range[1]
    tau0 = SADS_CROSSOVER + 0.02
    model = reparameterize(sads, measured_phi(sads, scale=0.5), tau0, x0_max=hi)
    lo2, hi2 = model.x0_range
    rng = np.random.default_rng(0)
    taus = rng.uniform(lo2 + 1e-9, hi2 - 1e-9, 200)
    vals = conformal_mean_curvature(model, taus, lattice_points(model, 3))
    assert np.min(vals) >= 2.0 * (1 - 1e-6)


def test_report_json_deterministic(sads):
    a = check_timelike_convergence(sads, n_samples=50, seed=7).to_json()
    b = check_timelike_convergence(sads, n_samples=50, seed=7).to_json()
    assert a == b and "NaN" not in a
    c = check_timelike_convergence(sads, n_samples=50, seed=8).to_json()
    assert a != c


def test_report_nan_is_json_safe():
    rep = CheckReport("x", False, math.nan, None, 0, math.nan, details={"v": np.float64(np.inf)})
    d = rep.to_dict()
    assert d["worst_value"] == "nan" and d["details"]["v"] == "inf"
    assert "FAIL" in rep.summary()
