"""Command-line front end: ``imcf run | check | oracle-compare | lifespan``.

Every output file starts with a header naming the package version and the
SHA-256 of the validated configuration, so identical configs and seeds give
byte-identical files.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis
from .config import MODEL_CHECKS, TRACE_CHECKS, RunConfig, parse_config
from .errors import ConfigError, IMCFError, NotPositive, OraclePrecondition, PreconditionError
from .flow import CLEAN_STOPS, TRACE_COLUMNS, FlowTrace, run
from .spacetime import lattice_points

log = logging.getLogger("imcf")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PRECONDITION = 0, 1, 2, 3, 4
THREADS_ENV = "IMCF_THREADS"


# --- output helpers ---------------------------------------------------------------


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _header(cfg: RunConfig, command: str) -> dict:
    return {"artifact": "imcf", "version": __version__, "config_sha256": cfg.config_hash, "command": command}


def _comment_block(header: dict) -> str:
    return "".join(f"# {k}: {v}\n" for k, v in header.items())


def write_trace_csv(path: Path, trace: FlowTrace, header: dict) -> None:
    lines = [_comment_block({**header, "stop_reason": trace.stop_reason}), ",".join(TRACE_COLUMNS) + "\n"]
    for rec in trace.records:
        lines.append(",".join(_fmt(getattr(rec, c)) for c in TRACE_COLUMNS) + "\n")
    path.write_text("".join(lines))


def read_trace_csv(path: Path) -> dict:
    """Columns of a trace CSV as float arrays."""
    rows = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    names = rows[0].split(",")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    return {n: data[:, i] for i, n in enumerate(names)}


def write_snapshots(out_dir: Path, trace: FlowTrace, cfg: RunConfig, header: dict) -> list[Path]:
    """Row-major float64 binaries with JSON sidecars, or plain CSV for small grids."""
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    grid = trace.grid
    fmt = cfg.output["snapshot_format"]
    written = []
    for i, (t, state) in enumerate(trace.snapshots):
        stem = snap_dir / f"snapshot_{i:05d}"
        meta = {
            **header,
            "index": i,
            "t": float(t),
            "grid_shape": list(grid.shape),
            "periods": list(grid.periods),
            "model_sha256": cfg.model_hash,
            "dtype": "<f8",
            "order": "C",
        }
        if fmt == "binary":
            path = stem.with_suffix(".bin")
            path.write_bytes(np.ascontiguousarray(state.u, dtype="<f8").tobytes())
        else:
            path = stem.with_suffix(".csv")
            pts = grid.points().reshape(-1, grid.d)
            cols = [f"x{k + 1}" for k in range(grid.d)] + ["u"]
            body = [",".join(cols) + "\n"]
            for p, val in zip(pts, state.u.ravel()):
                body.append(",".join(_fmt(c) for c in (*p, val)) + "\n")
            path.write_text(_comment_block(meta) + "".join(body))
        meta["data_file"] = path.name
        stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        written.append(path)
    return written


def read_snapshot(json_path) -> tuple[dict, np.ndarray]:
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    data_path = json_path.with_name(meta["data_file"])
    if data_path.suffix == ".bin":
        u = np.frombuffer(data_path.read_bytes(), dtype=meta["dtype"]).reshape(meta["grid_shape"])
    else:
        rows = [ln for ln in data_path.read_text().splitlines() if not ln.startswith("#")]
        u = np.loadtxt(rows[1:], delimiter=",", ndmin=2)[:, -1]
        u = u.reshape(meta["grid_shape"])
    return meta, u


def write_reports(path: Path, reports: list, header: dict) -> None:
    lines = [json.dumps({"header": header}, sort_keys=True)]
    lines += [r.to_json() for r in reports]
    path.write_text("\n".join(lines) + "\n")


def _error_report(name: str, exc: Exception, seed: int) -> analysis.CheckReport:
    return analysis.CheckReport(
        name=name, passed=False, worst_value=math.nan, worst_location=None, samples=0,
        tolerance=math.nan, seed=seed, details={"error": type(exc).__name__, "message": str(exc)},
    )


# --- checks -----------------------------------------------------------------------


def _default_barrier_sequence(model) -> np.ndarray:
    lo, hi = model.x0_range
    if math.isfinite(hi):
        start = lo if math.isfinite(lo) else hi - 1.0
        return start + (hi - start) * (1.0 - 0.5 ** np.arange(1, 21))
    start = model.time_samples_range[0]
    return start + np.arange(21, dtype=float)


def _default_interval(model) -> tuple[float, float]:
    lo, hi = model.x0_range
    if math.isfinite(lo) and math.isfinite(hi):
        span = hi - lo
        return lo + 0.1 * span, hi - 0.1 * span
    return model.time_samples_range


def _positive_start(model, a: float, b: float, n: int = 2049) -> float:
    """First sample of [a, b) after which inf_x e^psi Hbar stays positive."""
    taus = np.linspace(a, b, n, endpoint=False)
    inf_eH = analysis.conformal_mean_curvature(model, taus, lattice_points(model)).min(axis=1)
    bad = np.nonzero(inf_eH <= 0)[0]
    if not len(bad):
        return a
    if bad[-1] + 1 >= n:
        raise NotPositive("e^psi Hbar is not positive anywhere near the future end")
    return float(taus[bad[-1] + 1])


def _run_model_check(name: str, model, checks: dict, seed: int) -> analysis.CheckReport:
    opts = checks[name]
    if name == "timelike_convergence":
        return analysis.check_timelike_convergence(model, opts["n_samples"], seed, opts["tol"])
    if name == "barrier":
        seq = opts["x0_sequence"] or _default_barrier_sequence(model)
        return analysis.probe_mean_curvature_barrier(model, seq, opts["threshold"], opts["n_x"])
    if name == "strong_volume_decay":
        a, b = _default_interval(model)
        tau0 = _positive_start(model, a, b) if opts["tau0"] is None else opts["tau0"]
        b = b if opts["b"] is None else opts["b"]
        if isinstance(opts["phi"], str):
            if opts["phi"] != "measured":
                raise ConfigError([f"checks.strong_volume_decay.phi: unknown preset {opts['phi']!r}"])
            phi = analysis.measured_phi(model, scale=opts["scale"])
        else:
            value = float(opts["phi"])

            def phi(tau):
                return np.full(np.shape(tau), value)
        report, _ = analysis.check_strong_volume_decay(
            model, tau0, b, phi, n_tau=opts["n_tau"], tol=opts["tol"],
            analytic_divergence=opts["analytic_divergence"],
        )
        return report
    if name == "volume_identity":
        a, b = _default_interval(model)
        tau0 = a if opts["tau0"] is None else opts["tau0"]
        tau = b if opts["tau"] is None else opts["tau"]
        return analysis.volume_identity_residual(model, tau0, tau, tol=opts["tol"])
    raise ValueError(name)


def _run_trace_check(name: str, trace: FlowTrace, checks: dict) -> analysis.CheckReport:
    opts = checks[name]
    if name == "volume_law":
        return analysis.check_volume_law(trace, opts["tol"])
    if name == "tau_law":
        return analysis.check_tau_law(trace, opts["tol"])
    if name == "curvature_growth":
        return analysis.check_curvature_growth(trace, opts["factor"])
    if name == "monotone_graph":
        return analysis.check_monotone_graph(trace)
    if name == "gauge_bound":
        return analysis.check_gauge_bound(trace, opts["tol"])
    raise ValueError(name)


def _guarded(reports: list, name: str, seed: int, fn) -> bool:
    """Run one checker; a precondition failure becomes a failed report."""
    try:
        reports.append(fn())
        return False
    except PreconditionError as exc:
        reports.append(_error_report(name, exc, seed))
        return True


def _check_exit(reports: list, precondition_hit: bool) -> int:
    if precondition_hit:
        return EXIT_PRECONDITION
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


# --- subcommands ------------------------------------------------------------------


def _out_dir(cfg: RunConfig, override: str | None) -> Path:
    path = Path(override or cfg.output["directory"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _flow_exit(trace: FlowTrace) -> int:
    return EXIT_OK if trace.stop_reason in CLEAN_STOPS else EXIT_NUMERICAL


def cmd_run(cfg: RunConfig, output_dir: str | None = None) -> int:
    out = _out_dir(cfg, output_dir)
    header = _header(cfg, "run")
    model = cfg.build_model()
    grid = cfg.build_grid(model)
    trace = run(model, grid, cfg.initial_field(grid), cfg.flow)
    write_trace_csv(out / "trace.csv", trace, header)
    if cfg.output["snapshots"]:
        write_snapshots(out, trace, cfg, header)
    reports: list = []
    hit = False
    for name in cfg.checks["enabled"]:
        if name in TRACE_CHECKS:
            hit |= _guarded(reports, name, cfg.seed, lambda n=name: _run_trace_check(n, trace, cfg.checks))
        elif name in MODEL_CHECKS:
            hit |= _guarded(reports, name, cfg.seed,
                            lambda n=name: _run_model_check(n, model, cfg.checks, cfg.seed))
    write_reports(out / "reports.jsonl", reports, {**header, "stop_reason": trace.stop_reason})
    for r in reports:
        log.info(r.summary())
    log.info("run finished at t=%s (%s, %d steps)", _fmt(trace.records[-1].t), trace.stop_reason, trace.n_steps)
    code = _flow_exit(trace)
    return code if code != EXIT_OK else _check_exit(reports, hit)


def cmd_check(cfg: RunConfig, output_dir: str | None = None) -> int:
    out = _out_dir(cfg, output_dir)
    header = _header(cfg, "check")
    model = cfg.build_model()
    names = [n for n in cfg.checks["enabled"] if n in MODEL_CHECKS] or list(MODEL_CHECKS)
    reports: list = []
    hit = False
    for name in names:
        hit |= _guarded(reports, name, cfg.seed, lambda n=name: _run_model_check(n, model, cfg.checks, cfg.seed))
    write_reports(out / "reports.jsonl", reports, header)
    for r in reports:
        log.info(r.summary())
    return _check_exit(reports, hit)


def _closed_form(model, u0: float):
    """Exact homogeneous solution where one is known (ExpRW: u = u0 + t / (d lam))."""
    if model.name == "exprw":
        rate = 1.0 / (model.d * model.params["lam"])
        return lambda t: u0 + rate * np.asarray(t)
    return None


def cmd_oracle_compare(cfg: RunConfig, output_dir: str | None = None) -> int:
    model = cfg.build_model()
    if not model.homogeneous or not cfg.homogeneous_initial:
        raise OraclePrecondition("OraclePrecondition: oracle comparison needs homogeneous model and data")
    out = _out_dir(cfg, output_dir)
    header = _header(cfg, "oracle-compare")
    u0 = cfg.initial_constant()
    resolutions = [int(n) for n in cfg.oracle["resolutions"]] or [None]
    rows = []
    for n in resolutions:
        grid = cfg.build_grid(model, n_override=n)
        trace = run(model, grid, np.full(grid.shape, u0), cfg.flow)
        t_end = trace.records[-1].t
        oracle = analysis.homogeneous_oracle(model, u0, t_end, tol=cfg.oracle["tol"])
        t = trace.column("t")
        keep = t <= oracle.t_end
        ref = oracle(t[keep])
        dev = np.maximum(np.abs(trace.column("u_max")[keep] - ref), np.abs(trace.column("u_min")[keep] - ref))
        exact = _closed_form(model, u0)
        closed = np.max(np.abs(trace.column("u_max")[keep] - exact(t[keep]))) if exact else math.nan
        rows.append((grid.shape[0], grid.spacing[0], float(np.max(dev)), float(closed), t_end, trace.stop_reason))
        write_trace_csv(out / f"trace_N{grid.shape[0]}.csv", trace, {**header, "resolution": grid.shape[0]})
    lines = [_comment_block(header), "N,h,max_deviation,max_closed_form_deviation,observed_order,t_end,stop_reason\n"]
    prev = None
    for N, h, dev, closed, t_end, stop in rows:
        order = math.log(prev[2] / dev) / math.log(prev[1] / h) if prev and dev > 0 and prev[2] > 0 else math.nan
        lines.append(",".join([str(N), _fmt(h), _fmt(dev), _fmt(closed), _fmt(order), _fmt(t_end), stop]) + "\n")
        prev = (N, h, dev)
    (out / "deviation.csv").write_text("".join(lines))
    worst = max(r[2] for r in rows)
    log.info("max |u_PDE - u_ODE| = %.3e (limit %.1e)", worst, cfg.oracle["max_deviation"])
    return EXIT_OK if worst <= cfg.oracle["max_deviation"] else EXIT_CHECK_FAILED


def cmd_lifespan(cfg: RunConfig, t_eval: float, output_dir: str | None = None) -> int:
    if not (t_eval >= 0 and math.isfinite(t_eval)):
        raise ConfigError([f"--t: expected a finite non-negative time, got {t_eval}"])
    out = _out_dir(cfg, output_dir)
    header = {**_header(cfg, "lifespan"), "t_eval": _fmt(t_eval)}
    model = cfg.build_model()
    grid = cfg.build_grid(model)
    flow_cfg = cfg.flow if t_eval == 0 else replace(cfg.flow, t_max=t_eval)
    trace = run(model, grid, cfg.initial_field(grid), flow_cfg)
    if trace.records[-1].t < t_eval:
        raise PreconditionError(f"flow stopped at t={trace.records[-1].t:.6g} ({trace.stop_reason}) before --t")
    opts = cfg.checks["lifespan"]
    report = analysis.lifespan_bound_check(model, trace, t_eval, n_curves=opts["n_curves"],
                                           seed=cfg.seed, tol=opts["tol"])
    write_reports(out / "reports.jsonl", [report], header)
    log.info(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="TOML run configuration")
    common.add_argument("--output-dir", help="override output.directory")
    common.add_argument("--seed", type=int, help="override checks.seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(prog="imcf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"imcf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="integrate the flow and write the trace")
    sub.add_parser("check", parents=[common], help="run model-level condition checkers")
    sub.add_parser("oracle-compare", parents=[common], help="compare with the homogeneous ODE oracle")
    lp = sub.add_parser("lifespan", parents=[common], help="check the remaining-lifespan bound at --t")
    lp.add_argument("--t", type=float, required=True, dest="t_eval", help="flow time of the leaf")
    return parser


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        with _thread_limit():
            if args.command == "run":
                return cmd_run(cfg, args.output_dir)
            if args.command == "check":
                return cmd_check(cfg, args.output_dir)
            if args.command == "oracle-compare":
                return cmd_oracle_compare(cfg, args.output_dir)
            return cmd_lifespan(cfg, args.t_eval, args.output_dir)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except IMCFError as exc:
        name = type(exc).__name__
        text = str(exc)
        print(text if text.startswith(name) else f"{name}: {text}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
