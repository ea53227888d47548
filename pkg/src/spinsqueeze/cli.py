"""Batch front end: ``spinsqueeze run <config.yaml> [--output DIR] [--seed N] [--threads N]``.

Exit status is 0 on success, 1 for configuration errors and 2 for numerical
failures. Outputs are deterministic for a fixed config and seed; every file
starts with a header recording the code version, schema version and a hash
of the resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import enum
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from . import __version__
from .control import OptimizerOptions, SqueezingProblem, dephasing_sweep, optimize, uncontrolled_reference
from .fields import ControlField
from .integrate import IntegrationError
from .lattice import Boundary, LatticeSpec, build_couplings, collective_chi
from .moments import LostMeanSpinError
from .rotor import tat_optimum
from .spinwave import BdgError, CovarianceError, DynamicalInstabilityError

log = logging.getLogger("spinsqueeze")

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class Mode(str, enum.Enum):
    SIMULATE = "simulate"
    OPTIMIZE = "optimize"
    TAT_BENCHMARK = "tat_benchmark"
    ORACLE_VALIDATE = "oracle_validate"
    DEPHASING_SWEEP = "dephasing_sweep"


class NoiseKind(str, enum.Enum):
    NONE = "none"
    COLLECTIVE = "collective"
    INDIVIDUAL = "individual"


NUMERICAL_ERRORS = (DynamicalInstabilityError, LostMeanSpinError, BdgError, CovarianceError, IntegrationError,
                    FloatingPointError, np.linalg.LinAlgError, RuntimeError)


def load_schema() -> dict:
    return json.loads(resources.files("spinsqueeze").joinpath("schema.json").read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# config parsing with line numbers


def _line_map(text: str) -> dict:
    """Map key paths (tuples) to 1-based source lines."""
    lines = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


class _Reader:
    def __init__(self, data: dict, lines: dict):
        self.data = data
        self.lines = lines
        self.used: set = set()

    def error(self, path, msg):
        p = tuple(path)
        while p not in self.lines and p:
            p = p[:-1]
        name = ".".join(str(x) for x in path) or "<root>"
        raise ConfigError(f"line {self.lines.get(p, 1)}: {name}: {msg}")

    def get(self, path, kind, default=..., check=None, what=""):
        node = self.data
        for i, key in enumerate(path):
            if not isinstance(node, dict):
                self.error(path[:i], "expected a mapping")
            if key not in node:
                if default is ...:
                    self.error(path, "required key is missing")
                return default
            node = node[key]
        self.used.add(tuple(path))
        value = self._coerce(path, node, kind)
        if check is not None and not check(value):
            self.error(path, f"invalid value {node!r}" + (f" ({what})" if what else ""))
        return value

    def _coerce(self, path, v, kind):
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                self.error(path, f"expected a finite number, got {v!r}")
            return float(v)
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                self.error(path, f"expected an integer, got {v!r}")
            return int(v)
        if kind is str:
            if not isinstance(v, str):
                self.error(path, f"expected a string, got {v!r}")
            return v
        if kind is bool:
            if not isinstance(v, bool):
                self.error(path, f"expected true/false, got {v!r}")
            return v
        if kind == "floats":
            vs = v if isinstance(v, list) else [v]
            return [self._coerce(tuple(path) + (i,), x, float) for i, x in enumerate(vs)]
        if kind == "ints":
            vs = v if isinstance(v, list) else [v]
            return [self._coerce(tuple(path) + (i,), x, int) for i, x in enumerate(vs)]
        if kind is list:
            if not isinstance(v, list):
                self.error(path, "expected a list")
            return v
        if kind is dict:
            if not isinstance(v, dict):
                self.error(path, "expected a mapping")
            return v
        raise TypeError(kind)

    def check_unknown(self, allowed: dict, path=()):
        node = self.data
        for key in path:
            node = node.get(key, {})
        if not isinstance(node, dict):
            return
        for key in node:
            if key not in allowed:
                self.error(tuple(path) + (key,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
            if isinstance(allowed[key], dict):
                self.check_unknown(allowed[key], tuple(path) + (key,))


_LATTICE_KEYS = {"Lx": 1, "Ly": 1, "boundary": 1, "alpha": 1, "J": 1}
_OPT_KEYS = {k: 1 for k in ("total_time", "n_segments", "h_max", "max_iter", "gtol", "ftol", "delta",
                            "n_random_starts", "positive_seed", "random_scale", "refine_iter", "total_times")}
_ALLOWED = {
    "schema_version": 1, "mode": 1, "seed": 1, "output": 1,
    "lattice": _LATTICE_KEYS,
    "field": {"total_time": 1, "n_segments": 1, "values": 1},
    "noise": {"type": 1, "gamma": 1, "gammas": 1, "n_trajectories": 1},
    "optimizer": _OPT_KEYS,
    "time_grid": {"substeps": 1},
    "tat": {"lattices": 1, "n_grid": 1},
}


@dataclass(frozen=True)
class ExperimentConfig:
    mode: Mode
    lattice: LatticeSpec | None
    field: ControlField | None
    noise: NoiseKind
    gamma: float
    gammas: tuple
    n_trajectories: int
    optimizer: OptimizerOptions
    total_time: float
    n_segments: int
    h_max: float
    refine_iter: int
    total_times: tuple
    substeps: int
    tat_lattices: tuple
    tat_grid: int
    seed: int
    output: str
    threads: int = 1

    def canonical(self) -> dict:
        """Resolved settings that determine the results (output path and threads excluded)."""
        lat = None if self.lattice is None else {
            "Lx": self.lattice.Lx, "Ly": self.lattice.Ly, "boundary": self.lattice.boundary.value,
            "alpha": self.lattice.alpha, "J": self.lattice.J}
        opt = {k: v for k, v in self.optimizer.__dict__.items() if k != "threads"}
        return {
            "mode": self.mode.value, "lattice": lat,
            "field": None if self.field is None else {"total_time": self.field.total_time,
                                                      "segments": [float(x) for x in self.field.segments]},
            "noise": self.noise.value, "gamma": self.gamma, "gammas": list(self.gammas),
            "n_trajectories": self.n_trajectories, "optimizer": opt, "total_time": self.total_time,
            "n_segments": self.n_segments, "h_max": self.h_max, "refine_iter": self.refine_iter,
            "total_times": list(self.total_times), "substeps": self.substeps,
            "tat_lattices": [list(x) for x in self.tat_lattices], "tat_grid": self.tat_grid, "seed": self.seed,
            "schema_version": SCHEMA_VERSION,
        }

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a YAML config; errors carry the offending line number."""
    try:
        data = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"line {line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError("line 1: the config must be a mapping")
    r = _Reader(data, lines)
    r.check_unknown(_ALLOWED)
    overrides = overrides or {}

    version = r.get(("schema_version",), int, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        r.error(("schema_version",), f"unsupported schema version {version} (expected {SCHEMA_VERSION})")
    mode_s = r.get(("mode",), str)
    try:
        mode = Mode(mode_s)
    except ValueError:
        r.error(("mode",), f"unknown mode {mode_s!r} (choose from {', '.join(m.value for m in Mode)})")
    seed = overrides.get("seed")
    if seed is None:
        seed = r.get(("seed",), int, 0)
    output = overrides.get("output") or r.get(("output",), str, "results")

    lattice = None
    if mode is not Mode.TAT_BENCHMARK:
        lx = r.get(("lattice", "Lx"), int, check=lambda v: v >= 1, what="must be >= 1")
        ly = r.get(("lattice", "Ly"), int, check=lambda v: v >= 1, what="must be >= 1")
        b = r.get(("lattice", "boundary"), str, "periodic")
        if b not in (x.value for x in Boundary):
            r.error(("lattice", "boundary"), "must be 'periodic' or 'open'")
        alpha = r.get(("lattice", "alpha"), float, 3.0, check=lambda v: v > 0, what="must be > 0")
        J = r.get(("lattice", "J"), float, 1.0, check=lambda v: v > 0, what="must be > 0")
        try:
            lattice = LatticeSpec(lx, ly, Boundary(b), alpha, J)
        except ValueError as exc:
            r.error(("lattice",), str(exc))

    noise = NoiseKind(r.get(("noise", "type"), str, "none",
                            check=lambda v: v in {k.value for k in NoiseKind}, what="none|collective|individual"))
    nonneg = dict(check=lambda v: v >= 0, what="must be >= 0")
    gamma = r.get(("noise", "gamma"), float, 0.0, **nonneg)
    gammas = r.get(("noise", "gammas"), "floats", [])
    for i, g in enumerate(gammas):
        if g < 0:
            r.error(("noise", "gammas", i), "rates must be >= 0")
    n_traj = r.get(("noise", "n_trajectories"), int, 500, check=lambda v: v >= 1, what="must be >= 1")
    substeps = r.get(("time_grid", "substeps"), int, 1, check=lambda v: v >= 1, what="must be >= 1")

    fld = None
    if mode in (Mode.SIMULATE, Mode.ORACLE_VALIDATE):
        T = r.get(("field", "total_time"), float, check=lambda v: v > 0, what="must be > 0")
        vals = r.get(("field", "values"), "floats", [0.0])
        M = r.get(("field", "n_segments"), int, len(vals), check=lambda v: v >= 1, what="must be >= 1")
        if len(vals) == 1:
            vals = vals * M
        if len(vals) != M:
            r.error(("field", "values"), f"expected 1 or {M} values, got {len(vals)}")
        fld = ControlField(T, np.array(vals))

    opt_T = r.get(("optimizer", "total_time"), float, 1.0, check=lambda v: v > 0, what="must be > 0")
    opt_M = r.get(("optimizer", "n_segments"), int, 64, check=lambda v: v >= 1, what="must be >= 1")
    h_max = r.get(("optimizer", "h_max"), float, 10.0, check=lambda v: v > 0, what="must be > 0")
    if fld is not None and np.any(np.abs(fld.segments) > h_max):
        r.error(("field", "values"), f"field exceeds |h| <= h_max = {h_max}")
    opts = OptimizerOptions(
        max_iter=r.get(("optimizer", "max_iter"), int, 200, check=lambda v: v >= 0, what="must be >= 0"),
        gtol=r.get(("optimizer", "gtol"), float, 1e-6, check=lambda v: v > 0, what="must be > 0"),
        ftol=r.get(("optimizer", "ftol"), float, 1e-12, **nonneg),
        delta=r.get(("optimizer", "delta"), float, 1e-4, check=lambda v: v > 0, what="must be > 0"),
        n_random_starts=r.get(("optimizer", "n_random_starts"), int, 8, **nonneg),
        positive_seed=r.get(("optimizer", "positive_seed"), float, 0.5),
        random_scale=r.get(("optimizer", "random_scale"), float, 1.0, **nonneg),
        seed=seed, threads=max(1, int(overrides.get("threads") or 1)),
    )
    refine_iter = r.get(("optimizer", "refine_iter"), int, 60, check=lambda v: v >= 0, what="must be >= 0")
    total_times = r.get(("optimizer", "total_times"), "floats", [opt_T])
    for i, t in enumerate(total_times):
        if t <= 0:
            r.error(("optimizer", "total_times", i), "times must be > 0")

    tat_lattices, tat_grid = (), 2001
    if mode is Mode.TAT_BENCHMARK:
        raw = r.get(("tat", "lattices"), list)
        out = []
        for i, item in enumerate(raw):
            if not (isinstance(item, list) and len(item) == 2 and all(isinstance(x, int) and x >= 1 for x in item)):
                r.error(("tat", "lattices", i), "each entry must be [Lx, Ly] with positive integers")
            if item[0] * item[1] < 2:
                r.error(("tat", "lattices", i), "need at least two sites")
            out.append(tuple(item))
        if not out:
            r.error(("tat", "lattices"), "empty list")
        tat_lattices = tuple(out)
        tat_grid = r.get(("tat", "n_grid"), int, 2001, check=lambda v: v >= 3, what="must be >= 3")

    if mode is Mode.DEPHASING_SWEEP:
        if noise is not NoiseKind.COLLECTIVE and noise is not NoiseKind.INDIVIDUAL:
            r.error(("noise", "type"), "dephasing_sweep needs noise type 'collective' or 'individual'")
        if not gammas:
            r.error(("noise", "gammas"), "dephasing_sweep needs a non-empty list of rates")
    if mode is Mode.SIMULATE and noise is NoiseKind.INDIVIDUAL:
        r.error(("noise", "type"), "individual dephasing is only available in oracle_validate and dephasing_sweep")
    if mode is Mode.OPTIMIZE and noise is NoiseKind.INDIVIDUAL:
        r.error(("noise", "type"), "optimize supports noise 'none' or 'collective'")
    if mode is Mode.ORACLE_VALIDATE:
        from .oracle import MAX_DENSITY_SPINS, MAX_PURE_SPINS
        cap = MAX_PURE_SPINS if noise is NoiseKind.NONE else MAX_DENSITY_SPINS
        if lattice.n_sites > cap:
            r.error(("lattice",), f"oracle_validate with noise '{noise.value}' is limited to N <= {cap}")

    return ExperimentConfig(
        mode=mode, lattice=lattice, field=fld, noise=noise, gamma=gamma, gammas=tuple(gammas),
        n_trajectories=n_traj, optimizer=opts, total_time=opt_T, n_segments=opt_M, h_max=h_max,
        refine_iter=refine_iter, total_times=tuple(total_times), substeps=substeps,
        tat_lattices=tat_lattices, tat_grid=tat_grid, seed=seed, output=output, threads=opts.threads,
    )


# --------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _header(cfg: ExperimentConfig, kind: str) -> dict:
    return {"code_version": __version__, "schema_version": SCHEMA_VERSION, "config_hash": cfg.hash(),
            "mode": cfg.mode.value, "kind": kind}


def render_csv(cfg: ExperimentConfig, kind: str, columns: list, rows) -> str:
    buf = io.StringIO()
    for k, v in _header(cfg, kind).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, ControlField):
        return {"total_time": x.total_time, "segments": _jsonable(x.segments)}
    return x


def render_json(cfg: ExperimentConfig, kind: str, payload: dict) -> str:
    doc = {"header": _header(cfg, kind), **_jsonable(payload)}
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


TRAJECTORY_COLUMNS = ["t", "xi_db", "mean_spin", "s_squared", "n_fm", "h"]


def _trajectory_rows(tr: dict):
    return zip(*(tr[c] for c in TRAJECTORY_COLUMNS))


# --------------------------------------------------------------------------
# modes


def _run_simulate(cfg: ExperimentConfig) -> dict:
    gamma = cfg.gamma if cfg.noise is NoiseKind.COLLECTIVE else 0.0
    p = SqueezingProblem(cfg.lattice, cfg.field.total_time, cfg.field.n_segments, gamma, cfg.h_max)
    tr = p.trajectory(cfg.field, cfg.substeps)
    return {"trajectory.csv": render_csv(cfg, "trajectory", TRAJECTORY_COLUMNS, _trajectory_rows(tr))}


def _run_optimize(cfg: ExperimentConfig, outdir: str) -> dict:
    gamma = cfg.gamma if cfg.noise is NoiseKind.COLLECTIVE else 0.0
    p = SqueezingProblem(cfg.lattice, cfg.total_time, cfg.n_segments, gamma, cfg.h_max)
    os.makedirs(outdir, exist_ok=True)
    ckpt = os.path.join(outdir, f"checkpoint-{cfg.hash()[:12]}.json")
    res = optimize(p, options=cfg.optimizer, checkpoint=ckpt)
    ref = uncontrolled_reference(p, cfg.substeps)
    tr = p.trajectory(res.best_field, cfg.substeps)
    payload = res.to_json()
    payload["uncontrolled"] = ref
    return {
        "optimization.json": render_json(cfg, "optimization", payload),
        "trajectory.csv": render_csv(cfg, "trajectory", TRAJECTORY_COLUMNS, _trajectory_rows(tr)),
    }


def _run_tat(cfg: ExperimentConfig) -> dict:
    rows = []
    for lx, ly in cfg.tat_lattices:
        spec = LatticeSpec(lx, ly)
        chi = collective_chi(build_couplings(spec))
        xi2, t = tat_optimum(spec.n_sites, chi, cfg.tat_grid)
        rows.append((lx, ly, spec.n_sites, chi, xi2, -10 * np.log10(xi2), t))
    cols = ["Lx", "Ly", "n_spins", "chi", "xi_squared_min", "xi_db_min", "t_min"]
    return {"tat_benchmark.csv": render_csv(cfg, "tat_benchmark", cols, rows)}


def _run_oracle(cfg: ExperimentConfig) -> dict:
    from .validation import validate_against_oracle

    report = validate_against_oracle(cfg.lattice, cfg.field, noise=cfg.noise.value, gamma=cfg.gamma,
                                     substeps=cfg.substeps, n_trajectories=cfg.n_trajectories, seed=cfg.seed)
    cols = ["t", "rsw", "oracle", "abs_dev"]
    rows = [(pt["t"], pt["rsw"], pt["oracle"], pt["abs_dev"]) for pt in report["points"]]
    return {"oracle_report.json": render_json(cfg, "oracle_report", report),
            "oracle_report.csv": render_csv(cfg, "oracle_report", cols, rows)}


def _run_sweep(cfg: ExperimentConfig) -> dict:
    cols = ["noise", "gamma", "total_time", "xi_squared_opt", "xi_db_opt", "xi_db_uncontrolled_end",
            "xi_db_uncontrolled_best"]
    if cfg.noise is NoiseKind.COLLECTIVE:
        res = dephasing_sweep(cfg.lattice, cfg.gammas, cfg.total_times, cfg.n_segments, cfg.optimizer,
                              cfg.h_max, cfg.refine_iter)
        rows = [("collective", r["gamma_c"], r["total_time"], r["xi_squared_opt"], r["xi_db_opt"],
                 r["xi_db_uncontrolled_end"], r["xi_db_uncontrolled_best"]) for r in res]
        fields = {f"{r['total_time']!r}/{r['gamma_c']!r}": r["best_field"] for r in res}
    else:
        from .validation import individual_dephasing_sweep

        res = individual_dephasing_sweep(cfg.lattice, cfg.gammas, cfg.total_times, cfg.n_segments,
                                         cfg.optimizer, cfg.h_max, cfg.n_trajectories, cfg.seed)
        rows = [("individual", r["gamma_phi"], r["total_time"], r["xi_squared_opt"], r["xi_db_opt"],
                 r["xi_db_uncontrolled_end"], r["xi_db_uncontrolled_best"]) for r in res]
        fields = {f"{r['total_time']!r}": r["best_field"] for r in res}
    return {"dephasing_sweep.csv": render_csv(cfg, "dephasing_sweep", cols, rows),
            "fields.json": render_json(cfg, "fields", {"fields": fields})}


def execute(cfg: ExperimentConfig) -> dict:
    """Run a validated config; returns ``{file name: contents}``.

    Only the optimizer touches the output directory early (for its checkpoint).
    """
    if cfg.mode is Mode.SIMULATE:
        return _run_simulate(cfg)
    if cfg.mode is Mode.OPTIMIZE:
        return _run_optimize(cfg, cfg.output)
    if cfg.mode is Mode.TAT_BENCHMARK:
        return _run_tat(cfg)
    if cfg.mode is Mode.ORACLE_VALIDATE:
        return _run_oracle(cfg)
    return _run_sweep(cfg)


def write_outputs(outdir: str, files: dict) -> None:
    os.makedirs(outdir, exist_ok=True)
    for name, text in sorted(files.items()):
        with open(os.path.join(outdir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def run(config_path: str, output: str | None = None, seed: int | None = None, threads: int | None = None) -> int:
    try:
        with open(config_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc.strerror}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text, {"output": output, "seed": seed, "threads": threads})
    except ConfigError as exc:
        print(f"config error: {config_path}: {exc}", file=sys.stderr)
        return 1
    try:
        files = execute(cfg)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    write_outputs(cfg.output, files)
    for name in sorted(files):
        print(os.path.join(cfg.output, name))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinsqueeze", description="Spin-squeezing control experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", help="path to a YAML experiment config")
    r.add_argument("--output", help="output directory (overrides the config)")
    r.add_argument("--seed", type=int, help="random seed (overrides the config)")
    r.add_argument("--threads", type=int, help="concurrent optimizer starts (results do not depend on it)")
    r.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("schema", help="print the config/output schema")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(load_schema(), indent=2, sort_keys=True))
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.output, args.seed, args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
