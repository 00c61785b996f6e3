"""Parametric sparse Bayesian dictionary learning: the outer/inner iteration and source read-out."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dict_update import active_set, assemble_llsq, solve_llsq
from .dictionary import (
    DeltaSolution,
    GridSpec,
    OffsetBounds,
    apply_offsets,
    assemble_dictionary,
    init_uniform_grid,
    linearized_dictionary,
)
from .exceptions import InvalidInputError, SolverDivergence
from .propagation import as_points, check_gamma
from .scene import MeasurementSet
from .sbl import ALPHA_FLOOR, HyperParams, compute_posterior, init_hyperparams, update_alpha, update_beta

MODES = ("full", "fixed-dictionary", "grid-only")


@dataclass(frozen=True)
class PsbdlConfig:
    K: int = 3
    granularity: int = 11
    area: float = 20.0
    lam: float = 1e-2
    a: float = 1.0
    b: float = 1e-6
    half_width: Optional[float] = None  # per-step grid offset bound; None -> spacing / 2
    gamma_step: float = 0.5
    gamma_init: float = 2.0
    inner_max: int = 200
    outer_max: int = 50
    inner_tol: float = 1e-3
    outer_tol: float = 1e-4
    mode: str = "full"
    wide_active: bool = True  # offsets for the 2K strongest points, not K
    beta_cap: float = 1e12  # relative to each sensor's mean squared reading
    normalize: bool = False  # solve on Y / rms(Y) so hyperparameters are unit-free

    def __post_init__(self):
        if self.K < 1:
            raise InvalidInputError("K must be >= 1")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise InvalidInputError("tolerances must be positive")
        if self.inner_max < 1 or self.outer_max < 1:
            raise InvalidInputError("iteration limits must be positive")
        check_gamma(self.gamma_init)

    @property
    def hyper(self) -> HyperParams:
        return HyperParams(self.lam, self.a, self.b)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SourceEstimate:
    location: np.ndarray
    power_mw: float
    power_dbm: float
    grid_index: int


@dataclass
class PsbdlResult:
    grid_final: GridSpec
    gamma_hat: float
    x_hat: np.ndarray
    spectrum: np.ndarray
    sources: list
    trace: list = field(default_factory=list)
    iterations: tuple = (0, 0)
    low_confidence: bool = False
    runtime: float = 0.0
    inner_times: list = field(default_factory=list)

    def locations(self) -> np.ndarray:
        return np.array([s.location for s in self.sources])

    def powers_dbm(self) -> np.ndarray:
        return np.array([s.power_dbm for s in self.sources])

    def to_dict(self) -> dict:
        return {
            "gamma_hat": self.gamma_hat,
            "sources": [
                {
                    "location": [float(x) for x in s.location],
                    "power_mw": s.power_mw,
                    "power_dbm": s.power_dbm,
                    "grid_index": s.grid_index,
                }
                for s in self.sources
            ],
            "grid_final": self.grid_final.points.tolist(),
            "spectrum": self.spectrum.tolist(),
            "iterations": {"outer": self.iterations[0], "inner": self.iterations[1]},
            "low_confidence": self.low_confidence,
            "runtime": self.runtime,
            "trace": self.trace,
        }


def extract_sources(U: np.ndarray, grid: GridSpec, K: int):
    """Spatial power spectrum (row means of U) and its K strongest grid points.

    Returns ``(sources, spectrum, low_confidence)``; ``low_confidence`` is set
    when fewer than K spectrum entries are positive.
    """
    U = np.atleast_2d(U)
    if K > U.shape[0]:
        raise InvalidInputError("K exceeds the number of grid points")
    spectrum = U.mean(axis=1)
    top = np.argsort(-spectrum, kind="stable")[:K]
    low_conf = bool(np.sum(spectrum > 0) < K)
    sources = []
    for i in top:
        p = float(spectrum[i])
        dbm = 10.0 * np.log10(p) if p > 0 else float("nan")
        sources.append(SourceEstimate(grid.points[i].copy(), p, dbm, int(i)))
    return sources, spectrum, low_conf


def alpha_change(old: np.ndarray, new: np.ndarray) -> float:
    """Largest alpha change relative to the largest alpha."""
    return float(np.max(np.abs(new - old)) / max(np.max(new), ALPHA_FLOOR))


def check_convergence(trace: list, config: PsbdlConfig, loop: str = "inner") -> tuple[bool, str]:
    """Stop/continue decision from the latest trace entry.

    Returns ``(stop, reason)``; reason is ``"converged"``, ``"max_iter"`` or ``""``.
    """
    if not trace:
        raise InvalidInputError("empty trace")
    last = trace[-1]
    if loop == "inner":
        if last["alpha_change"] < config.inner_tol:
            return True, "converged"
        if last["inner"] + 1 >= config.inner_max:
            return True, "max_iter"
        return False, ""
    if last["delta_max"] < config.outer_tol:
        return True, "converged"
    if last["outer"] + 1 >= config.outer_max:
        return True, "max_iter"
    return False, ""


def run_psbdl(Y, sensors, config: PsbdlConfig, grid: GridSpec | None = None) -> PsbdlResult:
    """Jointly recover the sparse source matrix, grid offsets and PLE.

    Each outer pass expands the dictionary at the current grid and PLE.  The
    inner loop then alternates posterior, EM hyperparameter updates and the
    bounded offset solve against the linearised dictionary; the final
    offsets are committed to the grid before the next expansion.

    ``mode="fixed-dictionary"`` never touches the grid or PLE (plain MMV SBL);
    ``mode="grid-only"`` keeps the PLE at its initial value.
    """
    started = time.perf_counter()
    if isinstance(Y, MeasurementSet):
        Y = Y.Y
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    sensors = as_points(sensors)
    M, T = Y.shape
    if M < 2 or len(sensors) != M:
        raise InvalidInputError(f"need M >= 2 sensors matching Y rows (Y has {M}, sensors {len(sensors)})")
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError("measurements contain non-finite values")
    hyper = config.hyper
    hyper.check(T)
    scale = float(np.sqrt(np.mean(Y**2))) if config.normalize else 1.0
    if scale > 0:
        Y = Y / scale
    else:
        scale = 1.0

    grid = grid if grid is not None else init_uniform_grid(config.area, config.granularity)
    gamma = float(config.gamma_init)
    N = grid.N
    alpha, beta = init_hyperparams(Y, N)
    beta_cap = config.beta_cap / np.maximum(np.mean(Y**2, axis=1), np.finfo(float).tiny)
    n_active = min(2 * config.K if config.wide_active else config.K, N)
    half = config.half_width if config.half_width is not None else grid.spacing / 2.0
    step_bounds = OffsetBounds.uniform(N, half, config.gamma_step)
    learn = config.mode != "fixed-dictionary"

    trace: list = []
    inner_times: list = []
    state = None
    total_inner = 0
    k = 0
    for k in range(config.outer_max):
        d = assemble_dictionary(grid, gamma, sensors)
        bounds = step_bounds.within(grid, gamma)
        du = np.zeros(N)
        dv = np.zeros(N)
        dg = 0.0
        active = np.zeros(0, dtype=int)
        for l in range(config.inner_max):
            t0 = time.perf_counter()
            phi = linearized_dictionary(d, du, dv, dg) if learn else d.phi0
            state = compute_posterior(phi, alpha, beta, Y)
            if not np.isfinite(state.log_evidence):
                raise SolverDivergence("non-finite evidence", trace)
            alpha_new = update_alpha(state, hyper.lam)
            beta_new = update_beta(Y, phi, state, hyper.a, hyper.b, beta_cap)
            if learn:
                active = active_set(alpha_new, n_active)
                coeffs = assemble_llsq(d, state, Y, active)
                init = DeltaSolution(du[active], dv[active], dg)
                sol = solve_llsq(coeffs, bounds.subset(active), init, fix_gamma=config.mode == "grid-only")
                du = np.zeros(N)
                dv = np.zeros(N)
                du[active] = sol.du
                dv[active] = sol.dv
                dg = sol.dgamma
            change = alpha_change(alpha, alpha_new)
            alpha, beta = alpha_new, beta_new
            inner_times.append(time.perf_counter() - t0)
            total_inner += 1
            trace.append(
                {
                    "outer": k,
                    "inner": l,
                    "log_evidence": state.log_evidence,
                    "alpha_change": change,
                    "delta_max": max(float(np.max(np.abs(du))), float(np.max(np.abs(dv))), abs(dg)),
                    "gamma": gamma,
                }
            )
            if check_convergence(trace, config, "inner")[0]:
                break
        if not learn:
            break
        grid, gamma = apply_offsets(grid, gamma, DeltaSolution(du[active], dv[active], dg), active)
        if check_convergence(trace, config, "outer")[0]:
            break

    x_hat = state.means * scale
    sources, spectrum, low_conf = extract_sources(x_hat, grid, config.K)
    return PsbdlResult(
        grid_final=grid,
        gamma_hat=gamma,
        x_hat=x_hat,
        spectrum=spectrum,
        sources=sources,
        trace=trace,
        iterations=(k + 1, total_inner),
        low_confidence=low_conf,
        runtime=time.perf_counter() - started,
        inner_times=inner_times,
    )
