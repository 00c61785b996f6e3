"""Command-line entry point: ``psbdl {simulate,solve,crlb,bench}``.

Exit codes: 0 success, 1 configuration/input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .bench import SCHEMA_VERSION, StudyConfig, records_csv, run_study, summary_json
from .crlb import scene_crlb
from .exceptions import InvalidInputError, SolverDivergence
from .scene import Scene, SceneConfig, random_scene, scene_config_dict, simulate_measurements
from .solver import MODES, PsbdlConfig, run_psbdl

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "area": _pos,
                "M": _posint,
                "K": _posint,
                "T": _posint,
                "sources": {
                    "oneOf": [
                        {"enum": ["fixed", "random"]},
                        {"type": "array", "items": _pair, "minItems": 1},
                    ]
                },
                "snr": _num,
                "jitter": {"type": "number", "minimum": 0},
                "gamma_range": _pair,
                "power_range_dbm": _pair,
                "constant_power": {"type": "boolean"},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "granularity": {"type": "integer", "minimum": 2},
                "lambda": _pos,
                "a": _num,
                "b": {"type": "number", "minimum": 0},
                "gamma_init": {"type": "number", "minimum": 2, "maximum": 6},
                "mode": {"enum": list(MODES)},
                "wide_active": {"type": "boolean"},
                "normalize": {"type": "boolean"},
                "beta_cap": _pos,
                "bounds": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "half_width": {"oneOf": [_pos, {"type": "null"}]},
                        "gamma_step": _pos,
                    },
                },
                "tolerances": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "inner_tol": _pos,
                        "outer_tol": _pos,
                        "inner_max": _posint,
                        "outer_max": _posint,
                    },
                },
            },
        },
        "study": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis", "values"],
            "properties": {
                "axis": {"enum": ["granularity", "snr", "sensors", "snapshots"]},
                "values": {"type": "array", "items": _num, "minItems": 1},
                "trials": _posint,
                "parallelism": _posint,
                "methods": {"type": "array", "items": {"enum": list(MODES)}, "minItems": 1},
                "seed_scheme": {"enum": ["independent", "paired"]},
                "crlb": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
            },
        },
    },
}

_nullable = {"type": ["number", "null"]}

# what ``solve`` writes
RESULT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config", "result"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config": {"type": "object"},
        "result": {
            "type": "object",
            "required": ["gamma_hat", "sources", "grid_final", "spectrum", "iterations", "low_confidence", "runtime", "trace"],
            "properties": {
                "gamma_hat": {"type": "number", "minimum": 2, "maximum": 6},
                "sources": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["location", "power_mw", "power_dbm", "grid_index"],
                        "properties": {
                            "location": _pair,
                            "power_mw": _num,
                            "power_dbm": _nullable,
                            "grid_index": {"type": "integer", "minimum": 0},
                        },
                    },
                },
                "grid_final": {"type": "array", "items": _pair},
                "spectrum": {"type": "array", "items": _num},
                "iterations": {
                    "type": "object",
                    "required": ["outer", "inner"],
                    "properties": {"outer": _posint, "inner": _posint},
                },
                "low_confidence": {"type": "boolean"},
                "runtime": {"type": "number", "minimum": 0},
                "trace": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["outer", "inner", "log_evidence", "alpha_change", "delta_max", "gamma"],
                    },
                },
            },
        },
    },
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    solver: PsbdlConfig = field(default_factory=PsbdlConfig)
    study: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    seed: int = 0

    def resolved(self) -> dict:
        s = self.solver
        doc = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "scene": scene_config_dict(self.scene),
            "solver": {
                "granularity": s.granularity,
                "lambda": s.lam,
                "a": s.a,
                "b": s.b,
                "gamma_init": s.gamma_init,
                "mode": s.mode,
                "wide_active": s.wide_active,
                "normalize": s.normalize,
                "beta_cap": s.beta_cap,
                "bounds": {"half_width": s.half_width, "gamma_step": s.gamma_step},
                "tolerances": {
                    "inner_tol": s.inner_tol,
                    "outer_tol": s.outer_tol,
                    "inner_max": s.inner_max,
                    "outer_max": s.outer_max,
                },
            },
        }
        if self.study:
            doc["study"] = dict(self.study)
        if self.output:
            doc["output"] = dict(self.output)
        return doc

    def study_config(self) -> StudyConfig:
        st = self.study
        return StudyConfig(
            axis=st.get("axis", "snr"),
            values=tuple(st.get("values", (self.scene.snr,))),
            trials=st.get("trials", 50),
            methods=tuple(st.get("methods", ("full",))),
            parallelism=st.get("parallelism", 1),
            base_seed=self.seed,
            scene=self.scene,
            solver=self.solver,
            seed_scheme=st.get("seed_scheme", "independent"),
            compute_crlb=st.get("crlb", True),
        )


def parse_config(doc: dict) -> RunConfig:
    """Validate a config document and fill every missing field with its default."""
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    sc = doc.get("scene", {})
    scene_kw = {k: sc[k] for k in ("area", "M", "K", "T", "snr", "jitter", "constant_power") if k in sc}
    if "sources" in sc:
        src = sc["sources"]
        scene_kw["sources"] = src if isinstance(src, str) else tuple(tuple(p) for p in src)
    for k in ("gamma_range", "power_range_dbm"):
        if k in sc:
            scene_kw[k] = tuple(sc[k])
    so = doc.get("solver", {})
    solver_kw = {k: so[k] for k in ("granularity", "a", "b", "gamma_init", "mode", "wide_active", "normalize", "beta_cap") if k in so}
    if "lambda" in so:
        solver_kw["lam"] = so["lambda"]
    solver_kw.update(so.get("bounds", {}))
    solver_kw.update(so.get("tolerances", {}))
    try:
        scene = SceneConfig(**scene_kw)
        solver = PsbdlConfig(K=scene.source_count(), area=scene.area, **solver_kw)
    except (InvalidInputError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(scene, solver, dict(doc.get("study", {})), dict(doc.get("output", {})), int(doc.get("seed", 0)))


def load_config(path) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(doc)


def write_matrix_csv(path, Y: np.ndarray) -> None:
    """M rows, T columns, header ``t1..tT``, 17 significant digits."""
    Y = np.atleast_2d(Y)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"t{j + 1}" for j in range(Y.shape[1])])
        for row in Y:
            w.writerow([format(float(x), ".17g") for x in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidInputError(f"{path}: no data rows")
    try:
        Y = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError(f"{path}: non-finite entries")
    return Y


def _dump(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _nan_to_none(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _nan_to_none(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_nan_to_none(v) for v in x]
    return x


def _seed(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return seed


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    rng = np.random.default_rng(seed)
    scene = random_scene(cfg.scene, rng)
    meas = simulate_measurements(scene, rng, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.seed = seed
    _dump(out / "scene.json", {"schema_version": SCHEMA_VERSION, "seed": seed, "config": cfg.resolved(), "scene": scene.to_dict()})
    write_matrix_csv(out / "Y.csv", meas.Y)
    return EXIT_OK


def _load_scene(path) -> Scene:
    try:
        doc = json.loads(Path(path).read_text())
        return Scene.from_dict(doc["scene"] if "scene" in doc else doc)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load scene {path}: {exc}") from None


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    meas = Path(args.measurements)
    y_path = meas / "Y.csv" if meas.is_dir() else meas
    scene_path = Path(args.scene) if args.scene else y_path.parent / "scene.json"
    scene = _load_scene(scene_path)
    try:
        Y = read_matrix_csv(y_path)
    except OSError as exc:
        raise ConfigError(f"cannot read measurements: {exc}") from None
    if Y.shape[0] != len(scene.sensors):
        raise ConfigError(f"measurements have {Y.shape[0]} rows but the scene has {len(scene.sensors)} sensors")
    solver = cfg.solver
    overrides = {"K": len(scene.sources) if args.K is None else args.K, "area": scene.area}
    if args.mode:
        overrides["mode"] = args.mode
    solver = replace(solver, **overrides)
    cfg.solver = solver
    result = run_psbdl(Y, scene.sensors, solver)
    doc = {"schema_version": SCHEMA_VERSION, "config": cfg.resolved(), "result": result.to_dict()}
    _dump(args.out, _nan_to_none(doc))
    return EXIT_OK


def cmd_crlb(args) -> int:
    cfg = load_config(args.config)
    if args.scene:
        scene = _load_scene(args.scene)
    else:
        seed = _seed(args, cfg)
        cfg.seed = seed
        scene = random_scene(cfg.scene, np.random.default_rng(seed))
    report = scene_crlb(scene, args.power_param, strict=not args.allow_floor)
    doc = {"schema_version": SCHEMA_VERSION, "config": cfg.resolved(), "power_param": args.power_param, **report.to_dict()}
    _dump(args.out, _nan_to_none(doc))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    cfg.seed = _seed(args, cfg)
    if args.axis:
        cfg.study["axis"] = args.axis
    if args.values:
        try:
            cfg.study["values"] = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if args.trials is not None:
        cfg.study["trials"] = args.trials
    if args.parallelism is not None:
        cfg.study["parallelism"] = args.parallelism
    if args.methods:
        cfg.study["methods"] = args.methods.split(",")
    try:
        study = cfg.study_config()
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    records, summary = run_study(study)
    out = Path(args.out or cfg.output.get("dir", "bench_out"))
    out.mkdir(parents=True, exist_ok=True)
    formats = cfg.output.get("formats", ["csv", "json"])
    if "csv" in formats:
        (out / "trials.csv").write_text(records_csv(records))
    if "json" in formats:
        (out / "summary.json").write_text(summary_json(study, summary, records) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psbdl", description="Multi-source RSS localization by parametric sparse Bayesian dictionary learning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a scene and write scene.json + Y.csv")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", help="run the solver on a measurement file")
    s.add_argument("--config")
    s.add_argument("--measurements", required=True, help="Y.csv or a directory written by simulate")
    s.add_argument("--scene", help="scene.json with sensor positions (default: next to Y.csv)")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--K", type=int, help="number of sources (default: from the scene)")
    s.add_argument("--out", required=True, help="result JSON path")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("crlb", help="Cramer-Rao bounds for a scene")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--scene", help="scene.json (default: draw one from the config and seed)")
    s.add_argument("--power-param", choices=("dB", "linear"), default="dB")
    s.add_argument("--allow-floor", action="store_true", help="use the floored model's derivatives when a source is within 1 m of a sensor")
    s.add_argument("--out", required=True, help="report JSON path")
    s.set_defaults(func=cmd_crlb)

    s = sub.add_parser("bench", help="Monte Carlo study; writes trials.csv + summary.json")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--axis", choices=("granularity", "snr", "sensors", "snapshots"))
    s.add_argument("--values", help="comma-separated axis values")
    s.add_argument("--trials", type=int)
    s.add_argument("--parallelism", type=int)
    s.add_argument("--methods", help="comma-separated subset of " + ",".join(MODES))
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDivergence, OSError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
