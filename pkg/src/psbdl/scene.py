"""Ground-truth scenes and synthetic multi-snapshot RSS measurements."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import InvalidInputError
from .propagation import (
    GAMMA_MAX,
    GAMMA_MIN,
    Point2D,
    as_points,
    check_gamma,
    dbm_to_linear,
    gain_matrix,
    linear_to_db,
)

DEFAULT_SOURCES = ((5.0, 9.0), (11.0, 17.0), (15.0, 5.0))


@dataclass(frozen=True)
class SceneConfig:
    """How to draw a random scene.

    ``sources`` is either ``"fixed"`` (the three fixed emitters),
    ``"random"`` (``K`` uniform draws) or an explicit list of ``[u, v]``.
    """

    area: float = 20.0
    M: int = 60
    K: int = 3
    T: int = 5
    sources: object = "fixed"
    snr: float = 25.0
    jitter: float = 5.0
    gamma_range: tuple = (GAMMA_MIN, GAMMA_MAX)
    power_range_dbm: tuple = (-10.0, 0.0)
    constant_power: bool = False

    def source_count(self) -> int:
        if self.sources == "fixed":
            return len(DEFAULT_SOURCES)
        if self.sources == "random":
            return self.K
        return len(self.sources)


@dataclass(frozen=True)
class Scene:
    sensors: np.ndarray  # (M, 2)
    sources: np.ndarray  # (K, 2)
    powers: np.ndarray  # (K, T) mW
    gamma_true: float
    noise_sigmas: np.ndarray  # (M,)
    area: float = 20.0
    nominal_snr: float = float("nan")
    jitter: float = 0.0

    def __post_init__(self):
        sensors = as_points(self.sensors)
        sources = as_points(self.sources)
        powers = np.atleast_2d(np.asarray(self.powers, dtype=float))
        sigmas = np.asarray(self.noise_sigmas, dtype=float).reshape(-1)
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "noise_sigmas", sigmas)
        M, K = len(sensors), len(sources)
        if M < 1 or K < 1 or powers.shape[1] < 1:
            raise InvalidInputError("scene needs at least one sensor, source and snapshot")
        if powers.shape[0] != K:
            raise InvalidInputError(f"powers has {powers.shape[0]} rows, expected K={K}")
        if sigmas.shape != (M,):
            raise InvalidInputError(f"noise_sigmas has shape {sigmas.shape}, expected ({M},)")
        if np.any(powers <= 0) or not np.all(np.isfinite(powers)):
            raise InvalidInputError("powers must be finite and positive")
        # zero sigma is allowed and means a noiseless sensor
        if np.any(sigmas < 0) or not np.all(np.isfinite(sigmas)):
            raise InvalidInputError("noise_sigmas must be finite and non-negative")
        check_gamma(self.gamma_true)

    @property
    def M(self) -> int:
        return len(self.sensors)

    @property
    def K(self) -> int:
        return len(self.sources)

    @property
    def T(self) -> int:
        return self.powers.shape[1]

    def gain(self) -> np.ndarray:
        """True mixing matrix Phi(sources, gamma_true), shape (M, K)."""
        return build_gain_matrix(self.sources, self.sensors, self.gamma_true)

    def noiseless(self) -> np.ndarray:
        return self.gain() @ self.powers

    def mean_power_dbm(self) -> np.ndarray:
        return linear_to_db(self.powers.mean(axis=1))

    def to_dict(self) -> dict:
        return {
            "area": self.area,
            "sensors": self.sensors.tolist(),
            "sources": self.sources.tolist(),
            "powers_mw": self.powers.tolist(),
            "gamma_true": self.gamma_true,
            "noise_sigmas": self.noise_sigmas.tolist(),
            "nominal_snr": self.nominal_snr,
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(
            sensors=np.asarray(d["sensors"], dtype=float),
            sources=np.asarray(d["sources"], dtype=float),
            powers=np.asarray(d["powers_mw"], dtype=float),
            gamma_true=float(d["gamma_true"]),
            noise_sigmas=np.asarray(d["noise_sigmas"], dtype=float),
            area=float(d.get("area", 20.0)),
            nominal_snr=float(d.get("nominal_snr", float("nan"))),
            jitter=float(d.get("jitter", 0.0)),
        )


@dataclass(frozen=True)
class MeasurementSet:
    Y: np.ndarray  # (M, T) mW
    seed: Optional[int] = None
    nominal_snr: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]


def build_gain_matrix(points, sensors, gamma: float) -> np.ndarray:
    """Entry (i, k) is the path gain from ``points[k]`` to ``sensors[i]``."""
    pts = as_points(points)
    sen = as_points(sensors)
    if len(pts) == 0 or len(sen) == 0:
        raise InvalidInputError("build_gain_matrix needs non-empty point and sensor sets")
    return gain_matrix(sen, pts, gamma)


def snr_per_sensor(response: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Per-sensor SNR in dB: ``10 lg(||row_i||^2 / (T sigma_i^2))``."""
    response = np.atleast_2d(response)
    T = response.shape[1]
    energy = np.sum(response**2, axis=1)
    return 10.0 * np.log10(energy / (T * np.asarray(sigmas) ** 2))


def sample_noise_sigmas(response: np.ndarray, nominal_snr: float, jitter: float, rng) -> np.ndarray:
    """Draw per-sensor noise deviations hitting ``nominal_snr +- U(jitter)`` dB.

    ``response`` is the noiseless M x T signal.  With ``jitter > 0`` each sensor
    gets its own SNR so the noise is nonuniform across sensors.
    """
    if jitter < 0:
        raise InvalidInputError("jitter must be non-negative")
    response = np.atleast_2d(np.asarray(response, dtype=float))
    M, T = response.shape
    energy = np.sum(response**2, axis=1)
    if np.any(energy <= 0):
        raise InvalidInputError("a sensor receives no signal; SNR undefined")
    snr = nominal_snr + rng.uniform(-jitter, jitter, size=M) if jitter > 0 else np.full(M, float(nominal_snr))
    return np.sqrt(energy / (T * 10.0 ** (snr / 10.0)))


def simulate_measurements(scene: Scene, rng, seed: Optional[int] = None) -> MeasurementSet:
    """Y = Phi(sources, gamma) W + E with E_it ~ N(0, sigma_i^2)."""
    clean = scene.noiseless()
    noise = rng.standard_normal(clean.shape) * scene.noise_sigmas[:, None]
    return MeasurementSet(Y=clean + noise, seed=seed, nominal_snr=scene.nominal_snr)


def _source_positions(config: SceneConfig, rng) -> np.ndarray:
    if config.sources == "fixed":
        return np.array(DEFAULT_SOURCES, dtype=float)
    if config.sources == "random":
        return rng.uniform(0.0, config.area, size=(config.K, 2))
    if isinstance(config.sources, str):
        raise InvalidInputError(f"unknown source layout {config.sources!r}")
    return as_points(config.sources)


def random_scene(config: SceneConfig, rng) -> Scene:
    """Draw sensors, PLE, powers and noise levels per ``config``.

    Draw order is fixed (sensors, sources, gamma, powers, SNR jitter) so a
    seeded generator always yields the same scene.
    """
    if config.M < 1 or config.T < 1:
        raise InvalidInputError("M and T must be positive")
    sensors = rng.uniform(0.0, config.area, size=(config.M, 2))
    sources = _source_positions(config, rng)
    K = len(sources)
    gamma = float(rng.uniform(*config.gamma_range))
    lo, hi = config.power_range_dbm
    if config.constant_power:
        p_dbm = np.repeat(rng.uniform(lo, hi, size=(K, 1)), config.T, axis=1)
    else:
        p_dbm = rng.uniform(lo, hi, size=(K, config.T))
    powers = dbm_to_linear(p_dbm)
    response = build_gain_matrix(sources, sensors, gamma) @ powers
    sigmas = sample_noise_sigmas(response, config.snr, config.jitter, rng)
    return Scene(
        sensors=sensors,
        sources=sources,
        powers=powers,
        gamma_true=gamma,
        noise_sigmas=sigmas,
        area=config.area,
        nominal_snr=config.snr,
        jitter=config.jitter,
    )


def scene_config_dict(config: SceneConfig) -> dict:
    d = asdict(config)
    d["gamma_range"] = list(config.gamma_range)
    d["power_range_dbm"] = list(config.power_range_dbm)
    if not isinstance(config.sources, str):
        d["sources"] = as_points(config.sources).tolist()
    return d


def points_list(points: Sequence) -> list:
    return [Point2D.from_seq(p) for p in as_points(points)]
