"""Monte Carlo study harness: seeded trials, estimate-to-truth matching, RMSE summaries."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .crlb import scene_crlb
from .exceptions import InvalidInputError
from .scene import SceneConfig, random_scene, scene_config_dict, simulate_measurements
from .solver import MODES, PsbdlConfig, run_psbdl

SCHEMA_VERSION = "1.0"
AXES = ("granularity", "snr", "sensors", "snapshots")
SEED_SCHEMES = ("independent", "paired")

CSV_FIELDS = [
    "schema_version",
    "axis",
    "axis_value",
    "trial",
    "seed",
    "method",
    "status",
    "location_rmse",
    "power_rmse",
    "ple_error",
    "gamma_true",
    "gamma_hat",
    "outer_iterations",
    "inner_iterations",
    "crlb_location",
    "crlb_power",
    "crlb_ple",
    "error",
]


def match_sources(estimates, truth) -> np.ndarray:
    """Index into ``estimates`` for each true source under squared-distance cost."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.atleast_2d(np.asarray(truth, dtype=float))
    if est.shape != tru.shape:
        raise InvalidInputError(f"estimate/truth count mismatch: {est.shape} vs {tru.shape}")
    cost = np.sum((tru[:, None, :] - est[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    order = np.empty(len(tru), dtype=int)
    order[rows] = cols
    return order


def rmse(estimates, truth, kind: str = "location", assignment=None) -> float:
    """Root-mean-square error over K sources.

    ``location`` matches estimates to truth by optimal assignment first.
    ``power`` (dB) uses ``assignment`` when given, else the identity.
    ``ple`` is the scalar absolute error.
    """
    if kind == "ple":
        return float(abs(float(np.asarray(estimates).reshape(-1)[0]) - float(np.asarray(truth).reshape(-1)[0])))
    if kind == "location":
        est = np.atleast_2d(np.asarray(estimates, dtype=float))
        tru = np.atleast_2d(np.asarray(truth, dtype=float))
        order = match_sources(est, tru) if assignment is None else np.asarray(assignment)
        return float(np.sqrt(np.mean(np.sum((tru - est[order]) ** 2, axis=1))))
    if kind == "power":
        est = np.asarray(estimates, dtype=float).reshape(-1)
        tru = np.asarray(truth, dtype=float).reshape(-1)
        if est.shape != tru.shape:
            raise InvalidInputError(f"estimate/truth count mismatch: {est.shape} vs {tru.shape}")
        order = np.arange(len(tru)) if assignment is None else np.asarray(assignment)
        return float(np.sqrt(np.mean((tru - est[order]) ** 2)))
    raise InvalidInputError(f"unknown rmse kind {kind!r}")


@dataclass
class MethodOutcome:
    status: str = "ok"
    location_rmse: float = float("nan")
    power_rmse: float = float("nan")
    ple_error: float = float("nan")
    gamma_hat: float = float("nan")
    runtime: float = float("nan")
    outer_iterations: int = 0
    inner_iterations: int = 0
    error: str = ""


@dataclass
class TrialRecord:
    axis: str
    axis_value: float
    trial: int
    seed: int
    gamma_true: float = float("nan")
    methods: dict = field(default_factory=dict)
    crlb: Optional[dict] = None
    status: str = "ok"
    error: str = ""

    def rows(self) -> list:
        crlb = self.crlb or {}
        out = []
        for method, m in self.methods.items():
            out.append(
                {
                    "schema_version": SCHEMA_VERSION,
                    "axis": self.axis,
                    "axis_value": self.axis_value,
                    "trial": self.trial,
                    "seed": self.seed,
                    "method": method,
                    "status": m.status if self.status == "ok" else "failed",
                    "location_rmse": m.location_rmse,
                    "power_rmse": m.power_rmse,
                    "ple_error": m.ple_error,
                    "gamma_true": self.gamma_true,
                    "gamma_hat": m.gamma_hat,
                    "outer_iterations": m.outer_iterations,
                    "inner_iterations": m.inner_iterations,
                    "crlb_location": crlb.get("location", float("nan")),
                    "crlb_power": crlb.get("power", float("nan")),
                    "crlb_ple": crlb.get("ple", float("nan")),
                    "error": m.error or self.error,
                }
            )
        return out


@dataclass(frozen=True)
class StudyConfig:
    axis: str = "snr"
    values: tuple = (25.0,)
    trials: int = 50
    methods: tuple = ("full",)
    parallelism: int = 1
    base_seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    solver: PsbdlConfig = field(default_factory=PsbdlConfig)
    seed_scheme: str = "independent"
    compute_crlb: bool = True

    def __post_init__(self):
        if self.axis not in AXES:
            raise InvalidInputError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if not self.values:
            raise InvalidInputError("at least one axis value required")
        if not self.methods or any(m not in MODES for m in self.methods):
            raise InvalidInputError(f"methods must be a non-empty subset of {MODES}")
        if self.parallelism < 1:
            raise InvalidInputError("parallelism must be >= 1")
        if self.seed_scheme not in SEED_SCHEMES:
            raise InvalidInputError(f"seed_scheme must be one of {SEED_SCHEMES}")
        if not 0 <= self.base_seed < 2**64:
            raise InvalidInputError("base seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("scene", "solver")}
        d["values"] = list(self.values)
        d["methods"] = list(self.methods)
        d["scene"] = scene_config_dict(self.scene)
        d["solver"] = self.solver.to_dict()
        return d


def _value_key(axis: str, value: float) -> int:
    digest = hashlib.sha256(f"{axis}={float(value)!r}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def trial_seed(base_seed: int, trial: int, axis: str, value: float, scheme: str = "independent") -> int:
    """64-bit per-trial seed.

    ``independent`` mixes in the axis value so every cell gets its own
    scenes; ``paired`` reuses the same seed along the axis (common random
    numbers), which makes trend comparisons far less noisy.
    """
    entropy = [int(base_seed), int(trial)]
    if scheme == "independent":
        entropy.append(_value_key(axis, value))
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def cell_configs(study: StudyConfig, value: float) -> tuple[SceneConfig, PsbdlConfig]:
    scene, solver = study.scene, study.solver
    if study.axis == "granularity":
        solver = replace(solver, granularity=int(value))
    elif study.axis == "snr":
        scene = replace(scene, snr=float(value))
    elif study.axis == "sensors":
        scene = replace(scene, M=int(value))
    else:
        scene = replace(scene, T=int(value))
    solver = replace(solver, K=scene.source_count(), area=scene.area)
    return scene, solver


def run_trial(study: StudyConfig, value: float, trial: int) -> TrialRecord:
    """One seeded scene, every requested method on the same measurements."""
    seed = trial_seed(study.base_seed, trial, study.axis, value, study.seed_scheme)
    record = TrialRecord(study.axis, float(value), trial, seed)
    scene_cfg, solver_cfg = cell_configs(study, value)
    try:
        rng = np.random.default_rng(seed)
        scene = random_scene(scene_cfg, rng)
        meas = simulate_measurements(scene, rng, seed)
    except Exception as exc:  # noqa: BLE001 - recorded, not raised
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        record.methods = {m: MethodOutcome(status="failed") for m in study.methods}
        return record
    record.gamma_true = scene.gamma_true
    true_dbm = 10.0 * np.log10(scene.powers.mean(axis=1))
    if study.compute_crlb:
        try:
            rep = scene_crlb(scene, "dB", strict=False)
            record.crlb = {"location": rep.location_bound, "power": rep.power_bound, "ple": rep.ple_bound}
        except Exception:  # noqa: BLE001
            record.crlb = None
    for method in study.methods:
        out = MethodOutcome()
        try:
            res = run_psbdl(meas.Y, scene.sensors, replace(solver_cfg, mode=method))
            order = match_sources(res.locations(), scene.sources)
            out.location_rmse = rmse(res.locations(), scene.sources, "location", order)
            out.power_rmse = rmse(res.powers_dbm(), true_dbm, "power", order)
            out.ple_error = res.gamma_hat - scene.gamma_true
            out.gamma_hat = res.gamma_hat
            out.runtime = res.runtime
            out.outer_iterations, out.inner_iterations = res.iterations
        except Exception as exc:  # noqa: BLE001
            out.status = "failed"
            out.error = f"{type(exc).__name__}: {exc}"
        record.methods[method] = out
    return record


def _run_cell(args):
    study, value, trial = args
    return run_trial(study, value, trial)


def run_study(study: StudyConfig, progress=None) -> tuple[list, list]:
    """All trials of the study plus the summary table.

    Records come back ordered by (axis value, trial) whatever the
    parallelism, and each trial depends only on its own seed.
    """
    jobs = [(study, v, t) for v in study.values for t in range(study.trials)]
    if study.parallelism == 1:
        records = []
        for job in jobs:
            records.append(_run_cell(job))
            if progress is not None:
                progress(records[-1])
    else:
        with ProcessPoolExecutor(max_workers=study.parallelism) as pool:
            records = list(pool.map(_run_cell, jobs, chunksize=max(1, len(jobs) // (4 * study.parallelism))))
    index = {float(v): i for i, v in enumerate(study.values)}
    records.sort(key=lambda r: (index[r.axis_value], r.trial))
    return records, summarize(records, study.methods)


def _rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x**2))) if x.size else float("nan")


def summarize(records: list, methods=None) -> list:
    """One row per (axis value, method).

    ``*_mean`` / ``*_median`` average per-trial RMSEs, ``*_rms`` is the root
    of the mean squared per-trial error (the PLE RMSE is that form), and the
    CRLB columns are the root of the mean bound variance.  Failed trials are
    excluded and counted.
    """
    if not records:
        raise InvalidInputError("no records to summarize")
    if methods is None:
        methods = sorted({m for r in records for m in r.methods})
    values = sorted({r.axis_value for r in records})
    rows = []
    for v in values:
        cell = sorted((r for r in records if r.axis_value == v), key=lambda r: (r.trial, r.seed))
        crlbs = [r.crlb for r in cell if r.status == "ok" and r.crlb]
        for method in methods:
            ok = [r.methods[method] for r in cell if r.status == "ok" and r.methods.get(method) and r.methods[method].status == "ok"]
            row = {
                "axis": cell[0].axis,
                "axis_value": v,
                "method": method,
                "trials": len(cell),
                "succeeded": len(ok),
                "failed": len(cell) - len(ok),
            }
            if ok:
                loc = np.array([m.location_rmse for m in ok])
                pwr = np.array([m.power_rmse for m in ok])
                pwr = pwr[np.isfinite(pwr)]
                ple = np.array([m.ple_error for m in ok])
                row.update(
                    location_rmse_mean=float(np.mean(loc)),
                    location_rmse_median=float(np.median(loc)),
                    location_rmse_rms=_rms(loc),
                    power_rmse_mean=float(np.mean(pwr)) if pwr.size else float("nan"),
                    power_rmse_rms=_rms(pwr),
                    ple_rmse=_rms(ple),
                    ple_mae=float(np.mean(np.abs(ple))),
                    mean_runtime=float(np.mean([m.runtime for m in ok])),
                    mean_inner_iterations=float(np.mean([m.inner_iterations for m in ok])),
                )
            else:
                row["absent"] = True
            if crlbs:
                for kind in ("location", "power", "ple"):
                    row[f"crlb_{kind}"] = float(np.sqrt(np.mean([c[kind] ** 2 for c in crlbs])))
            rows.append(row)
    return rows


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def records_csv(records: list) -> str:
    """Trial table as CSV text (LF endings, full float precision, no timings)."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        for row in r.rows():
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def summary_json(study: StudyConfig, summary: list, records: list | None = None) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "config": study.to_dict(), "summary": summary}
    if records is not None:
        doc["runtimes"] = [
            {"axis_value": r.axis_value, "trial": r.trial, "method": m, "runtime": o.runtime}
            for r in records
            for m, o in r.methods.items()
        ]
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True)
