"""Run configuration: TOML parsing, validation and object construction."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .errors import ConfigError
from .flow import FlowConfig
from .geometry import EPS_SPACE
from .grid import PeriodicGrid, fd_gradient, spd_inverse
from .spacetime import (
    SpacetimeModel,
    make_exp_rw,
    make_minkowski_slab,
    make_sads_interior,
)

MODELS = ("exprw", "sads", "minkowski")
INITIAL_KINDS = ("constant", "fourier", "file")
SNAPSHOT_FORMATS = ("binary", "csv")
MODEL_CHECKS = ("timelike_convergence", "barrier", "strong_volume_decay", "volume_identity")
TRACE_CHECKS = ("volume_law", "tau_law", "curvature_growth", "monotone_graph", "gauge_bound")

NUM = (int, float)
LIST = (list,)

# key -> (accepted types, default); a nested dict is a sub-table schema
SCHEMA = {
    "model": {
        "name": (str, None),
        "d": (int, 1),
        "lam": (NUM, 1.0),
        "n": (int, 1),
        "Lambda": (NUM, -1.0),
        "m": (NUM, 1.0),
        "kappa": (int, 0),
        "eps": (NUM, 1e-3),
        "x0_min": (NUM, -1.0),
        "x0_max": (NUM, 1.0),
        "periods": (LIST, None),
        "sample_range": (LIST, None),
    },
    "grid": {
        "shape": (LIST, None),
        "periods": (LIST, None),
    },
    "initial": {
        "kind": (str, "constant"),
        "value": (NUM, 0.0),
        "offset": (NUM, 0.0),
        "modes": (LIST, []),
        "path": (str, ""),
    },
    "flow": {
        "t_max": (NUM, 1.0),
        "cfl": (NUM, 0.5),
        "fd_order": (int, 2),
        "H_min_floor": (NUM, 1e-8),
        "vtilde_abort": (NUM, 1e6),
        "record_every": (int, 1),
        "snapshot_every": (NUM, math.inf),
        "integrator": (str, "rk2"),
        "eps_space": (NUM, EPS_SPACE),
        "residuals": (bool, True),
    },
    "checks": {
        "enabled": (LIST, []),
        "seed": (int, 0),
        "timelike_convergence": {"n_samples": (int, 1000), "tol": (NUM, 1e-8)},
        "barrier": {"x0_sequence": (LIST, []), "threshold": (NUM, 100.0), "n_x": (int, 8)},
        "strong_volume_decay": {
            "phi": ((str, int, float), "measured"),
            "scale": (NUM, 1.0),
            "tau0": (NUM, None),
            "b": (NUM, None),
            "n_tau": (int, 257),
            "tol": (NUM, 1e-10),
            "analytic_divergence": (bool, False),
        },
        "volume_identity": {"tau0": (NUM, None), "tau": (NUM, None), "tol": (NUM, 1e-6)},
        "volume_law": {"tol": (NUM, 1e-3)},
        "tau_law": {"tol": (NUM, 1e-3)},
        "curvature_growth": {"factor": (NUM, 0.99)},
        "monotone_graph": {},
        "gauge_bound": {"tol": (NUM, 1e-6)},
        "lifespan": {"n_curves": (int, 16), "tol": (NUM, 1e-3)},
    },
    "output": {
        "directory": (str, "imcf_out"),
        "snapshot_format": (str, "binary"),
        "snapshots": (bool, True),
    },
    "oracle": {
        "tol": (NUM, 1e-10),
        "max_deviation": (NUM, 1e-6),
        "resolutions": (LIST, []),
    },
}
REQUIRED = (("model", "name"), ("grid", "shape"))
MODE_KEYS = {"amplitude": NUM, "k": LIST, "phase": NUM}


def _type_ok(value, types) -> bool:
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool):
        return bool in types
    return isinstance(value, types)


def _type_name(types) -> str:
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join(t.__name__ for t in types)


def _validate_table(table: dict, schema: dict, path: str, problems: list) -> dict:
    out = {}
    for key, value in table.items():
        kp = f"{path}.{key}"
        if key not in schema:
            if isinstance(value, dict):
                for sub in value:
                    problems.append(f"{kp}.{sub}: unknown key")
            else:
                problems.append(f"{kp}: unknown key")
            continue
        entry = schema[key]
        if isinstance(entry, dict):
            if not isinstance(value, dict):
                problems.append(f"{kp}: expected a table")
                continue
            out[key] = _validate_table(value, entry, kp, problems)
            continue
        types, _ = entry
        if not _type_ok(value, types):
            problems.append(f"{kp}: expected {_type_name(types)}, got {type(value).__name__}")
            continue
        out[key] = float(value) if types == NUM else value
    for key, entry in schema.items():
        if key in out:
            continue
        if isinstance(entry, dict):
            out[key] = _validate_table({}, entry, f"{path}.{key}", problems)
        else:
            out[key] = entry[1]
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` holds every section with defaults filled in."""

    data: dict
    source: str = ""

    @property
    def model_section(self) -> dict:
        return self.data["model"]

    @property
    def flow(self) -> FlowConfig:
        return FlowConfig(**self.data["flow"])

    @property
    def checks(self) -> dict:
        return self.data["checks"]

    @property
    def output(self) -> dict:
        return self.data["output"]

    @property
    def oracle(self) -> dict:
        return self.data["oracle"]

    @property
    def seed(self) -> int:
        return int(self.data["checks"]["seed"])

    def with_seed(self, seed: int) -> "RunConfig":
        data = json.loads(json.dumps(self.data))
        data["checks"]["seed"] = int(seed)
        return RunConfig(data, self.source)

    def canonical_json(self, include_output: bool = False) -> str:
        data = dict(self.data)
        if not include_output:
            data = {k: v for k, v in data.items() if k != "output"}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        """SHA-256 of everything that affects results (the output directory is excluded)."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @property
    def model_hash(self) -> str:
        text = json.dumps(self.data["model"], sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def build_model(self) -> SpacetimeModel:
        return build_model(self.data["model"])

    def build_grid(self, model: SpacetimeModel | None = None, n_override: int | None = None) -> PeriodicGrid:
        model = model or self.build_model()
        shape = list(self.data["grid"]["shape"])
        if n_override is not None:
            shape = [int(n_override)] * len(shape)
        periods = self.data["grid"]["periods"] or list(model.periods)
        return PeriodicGrid(tuple(shape), tuple(periods))

    def initial_field(self, grid: PeriodicGrid) -> np.ndarray:
        return initial_field(self.data["initial"], grid, base=Path(self.source).parent if self.source else None)

    @property
    def homogeneous_initial(self) -> bool:
        ini = self.data["initial"]
        if ini["kind"] == "constant":
            return True
        if ini["kind"] == "fourier":
            return all(float(m.get("amplitude", 0.0)) == 0.0 for m in ini["modes"])
        return False

    def initial_constant(self) -> float:
        ini = self.data["initial"]
        return float(ini["value"] if ini["kind"] == "constant" else ini["offset"])


def build_model(section: dict) -> SpacetimeModel:
    name = section["name"]
    periods = section.get("periods")
    if name == "exprw":
        kwargs = {}
        if section.get("sample_range"):
            kwargs["sample_range"] = tuple(section["sample_range"])
        return make_exp_rw(section["lam"], section["d"], periods=periods, **kwargs)
    if name == "sads":
        return make_sads_interior(
            section["n"], section["Lambda"], section["m"], section["kappa"], section["eps"], periods=periods
        )
    if name == "minkowski":
        return make_minkowski_slab(section["d"], section["x0_min"], section["x0_max"], periods=periods)
    raise ConfigError([f"model.name: unknown model {name!r} (choose from {', '.join(MODELS)})"])


def _fourier(ini: dict, grid: PeriodicGrid) -> tuple[np.ndarray, np.ndarray]:
    """Field and exact gradient of offset + sum a sin(2 pi k.x / L + phase)."""
    x = grid.points()
    L = np.asarray(grid.periods)
    u = np.full(grid.shape, float(ini["offset"]))
    du = np.zeros(grid.shape + (grid.d,))
    for mode in ini["modes"]:
        k = np.asarray(mode["k"], dtype=float)
        wave = 2 * np.pi * k / L
        arg = x @ wave + float(mode.get("phase", 0.0))
        a = float(mode["amplitude"])
        u += a * np.sin(arg)
        du += a * np.cos(arg)[..., None] * wave
    return u, du


def initial_field(ini: dict, grid: PeriodicGrid, base: Path | None = None) -> np.ndarray:
    kind = ini["kind"]
    if kind == "constant":
        return np.full(grid.shape, float(ini["value"]))
    if kind == "fourier":
        return _fourier(ini, grid)[0]
    path = Path(ini["path"])
    if base is not None and not path.is_absolute():
        path = base / path
    if path.suffix == ".npy":
        data = np.load(path)
    else:
        data = np.loadtxt(path, delimiter=",", ndmin=1)
    if data.size != grid.n_points:
        raise ConfigError([f"initial.path: file holds {data.size} values, grid needs {grid.n_points}"])
    return np.asarray(data, dtype=float).reshape(grid.shape)


def _semantic_checks(data: dict, source: str, problems: list) -> None:
    model_s, grid_s, ini = data["model"], data["grid"], data["initial"]
    if model_s["name"] is not None and model_s["name"] not in MODELS:
        problems.append(f"model.name: unknown model {model_s['name']!r} (choose from {', '.join(MODELS)})")
    if ini["kind"] not in INITIAL_KINDS:
        problems.append(f"initial.kind: unknown preset {ini['kind']!r} (choose from {', '.join(INITIAL_KINDS)})")
    if ini["kind"] == "file" and not ini["path"]:
        problems.append("initial.path: required when initial.kind = 'file'")
    for i, mode in enumerate(ini["modes"]):
        kp = f"initial.modes[{i}]"
        if not isinstance(mode, dict):
            problems.append(f"{kp}: expected a table")
            continue
        for key, value in mode.items():
            if key not in MODE_KEYS:
                problems.append(f"{kp}.{key}: unknown key")
            elif not _type_ok(value, MODE_KEYS[key]):
                problems.append(f"{kp}.{key}: expected {_type_name(MODE_KEYS[key])}")
        for key in ("amplitude", "k"):
            if key not in mode:
                problems.append(f"{kp}.{key}: missing required key")
    shape = grid_s["shape"]
    if shape is not None and not all(isinstance(n, int) and not isinstance(n, bool) for n in shape):
        problems.append("grid.shape: expected a list of integers")
    if data["output"]["snapshot_format"] not in SNAPSHOT_FORMATS:
        problems.append(f"output.snapshot_format: choose from {', '.join(SNAPSHOT_FORMATS)}")
    for name in data["checks"]["enabled"]:
        if name not in MODEL_CHECKS + TRACE_CHECKS:
            problems.append(f"checks.enabled: unknown check {name!r}")
    try:
        FlowConfig(**data["flow"])
    except ConfigError as exc:
        problems.extend(exc.violations)
    except TypeError as exc:
        problems.append(f"flow: {exc}")


def _spacelike_check(cfg: RunConfig, problems: list) -> None:
    """Initial data must lie in the time range and keep |Du| < 1 - eps_space."""
    try:
        model = cfg.build_model()
        n_axes = len(cfg.data["grid"]["shape"])
        if n_axes != model.d:
            problems.append(f"grid.shape: {n_axes} axes but model {model.name!r} has dimension {model.d}")
            return
        grid = cfg.build_grid(model)
    except ConfigError as exc:
        problems.extend(exc.violations)
        return
    except (ValueError, ArithmeticError) as exc:
        problems.append(f"model/grid: {exc}")
        return
    ini = cfg.data["initial"]
    try:
        if ini["kind"] == "fourier":
            u, du = _fourier(ini, grid)
        else:
            u = cfg.initial_field(grid)
            du = fd_gradient(u, grid, cfg.data["flow"]["fd_order"])
    except (OSError, ValueError) as exc:
        problems.append(f"initial.path: {exc}")
        return
    if not np.all(model.in_domain(u)):
        problems.append(f"initial: u0 leaves the model time range {model.x0_range}")
        return
    sigma_inv, _ = spd_inverse(model.sigma(u, grid.points()))
    grad2 = np.einsum("...i,...ij,...j->...", du, sigma_inv, du)
    eps = cfg.data["flow"].get("eps_space", EPS_SPACE)
    worst = float(np.max(grad2))
    if worst >= 1.0 - eps:
        problems.append(
            f"initial: spacelike invariant violated, max |Du| = {math.sqrt(worst):.6g} "
            f"must stay below sqrt(1 - eps_space)"
        )


def parse_config_text(text: str, source: str = "") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"<file>: TOML syntax error: {exc}"]) from exc
    problems: list[str] = []
    data = {}
    for key, value in raw.items():
        if key not in SCHEMA:
            if isinstance(value, dict):
                problems.extend(f"{key}.{sub}: unknown key" for sub in value)
            else:
                problems.append(f"{key}: unknown key")
            continue
        if not isinstance(value, dict):
            problems.append(f"{key}: expected a table")
            continue
        data[key] = value
    for section, schema in SCHEMA.items():
        data[section] = _validate_table(data.get(section, {}), schema, section, problems)
    for section, key in REQUIRED:
        if data[section][key] is None:
            problems.append(f"{section}.{key}: missing required key")
    if data["model"]["name"] is not None:
        _semantic_checks(data, source, problems)
    cfg = RunConfig(data, source)
    # the spacelike test needs a model, a grid and initial data that parsed cleanly
    if not any(p.startswith(("model", "grid", "initial", "flow", "<file>")) for p in problems):
        _spacelike_check(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"<file>: {path} does not exist"])
    return parse_config_text(path.read_text(), source=str(path))
