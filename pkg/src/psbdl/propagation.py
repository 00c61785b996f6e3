"""Log-distance path-loss model and its analytic derivatives.

Received power is handled in linear units (mW).  The gain between a sensor
and an emitter at distance ``d`` is ``max(d, floor) ** -gamma``, i.e. 0 dB
inside the near-field floor and ``-10 * gamma * lg(d)`` dB outside it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import InvalidInputError

GAMMA_MIN = 2.0
GAMMA_MAX = 6.0
NEAR_FIELD_FLOOR = 1.0


@dataclass(frozen=True)
class Point2D:
    """Cartesian position in meters."""

    u: float
    v: float

    def __post_init__(self):
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise InvalidInputError(f"non-finite coordinates ({self.u}, {self.v})")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)

    @classmethod
    def from_seq(cls, xy) -> "Point2D":
        u, v = xy
        return cls(float(u), float(v))


@dataclass(frozen=True)
class PropagationModel:
    gamma: float
    near_field_floor: float = NEAR_FIELD_FLOOR
    ref_distance: float = 1.0

    def __post_init__(self):
        check_gamma(self.gamma)
        if not self.near_field_floor > 0:
            raise InvalidInputError("near_field_floor must be positive")

    def gain(self, sensor, source) -> float:
        return path_gain(sensor, source, self.gamma, self.near_field_floor)

    def partials(self, sensor, source) -> "GainPartials":
        return path_gain_partials(sensor, source, self.gamma, self.near_field_floor)


class GainPartials(NamedTuple):
    du: float
    dv: float
    dgamma: float
    degenerate: bool


def check_gamma(gamma: float) -> None:
    if not np.isfinite(gamma) or not GAMMA_MIN <= gamma <= GAMMA_MAX:
        raise InvalidInputError(f"path-loss exponent {gamma!r} outside [{GAMMA_MIN}, {GAMMA_MAX}]")


def _xy(p) -> np.ndarray:
    arr = p.as_array() if isinstance(p, Point2D) else np.asarray(p, dtype=float)
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"expected a finite 2-D point, got {p!r}")
    return arr


def path_gain(sensor, source, gamma: float, floor: float = NEAR_FIELD_FLOOR) -> float:
    """Linear gain ``max(d, floor) ** -gamma`` between two points."""
    check_gamma(gamma)
    d = float(np.hypot(*(_xy(source) - _xy(sensor))))
    return max(d, floor) ** -gamma


def path_gain_partials(sensor, source, gamma: float, floor: float = NEAR_FIELD_FLOOR) -> GainPartials:
    """Derivatives of :func:`path_gain` w.r.t. the source coordinates and gamma.

    Inside the floor region the model is constant, so all partials are zero
    and ``degenerate`` is set.
    """
    check_gamma(gamma)
    diff = _xy(source) - _xy(sensor)
    d = float(np.hypot(*diff))
    if d <= floor:
        return GainPartials(0.0, 0.0, 0.0, True)
    scale = -gamma * d ** (-gamma - 2.0)
    return GainPartials(scale * diff[0], scale * diff[1], -np.log(d) * d**-gamma, False)


def as_points(points) -> np.ndarray:
    """Coerce a sequence of Point2D / pairs / an (n, 2) array into a float array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        arr = np.array([p.as_array() if isinstance(p, Point2D) else p for p in points], dtype=float)
    arr = arr.reshape(-1, 2) if arr.size else arr.reshape(0, 2)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("non-finite coordinates")
    return arr


def distance_matrix(sensors, points) -> np.ndarray:
    s = as_points(sensors)
    p = as_points(points)
    return np.hypot(p[None, :, 0] - s[:, None, 0], p[None, :, 1] - s[:, None, 1])


def gain_matrix(sensors, points, gamma: float, floor: float = NEAR_FIELD_FLOOR) -> np.ndarray:
    """Vectorised :func:`path_gain` over every (sensor, point) pair; shape (M, P)."""
    check_gamma(gamma)
    return np.maximum(distance_matrix(sensors, points), floor) ** -gamma


def gain_and_partials(sensors, points, gamma: float, floor: float = NEAR_FIELD_FLOOR):
    """Gain matrix plus its derivatives w.r.t. point u, point v and gamma.

    Returns ``(phi, d_u, d_v, d_gamma)``, each (M, P).  Entries whose distance
    is within the floor have zero derivatives.
    """
    check_gamma(gamma)
    s = as_points(sensors)
    p = as_points(points)
    du = p[None, :, 0] - s[:, None, 0]
    dv = p[None, :, 1] - s[:, None, 1]
    d = np.hypot(du, dv)
    outside = d > floor
    d_eff = np.where(outside, d, floor)
    phi = d_eff**-gamma
    scale = np.where(outside, -gamma * phi / d_eff**2, 0.0)
    d_gamma = np.where(outside, -np.log(d_eff) * phi, 0.0)
    return phi, scale * du, scale * dv, d_gamma


def dbm_to_linear(p_dbm):
    """dBm to mW."""
    p = np.asarray(p_dbm, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("non-finite power in dBm")
    out = 10.0 ** (p / 10.0)
    return float(out) if out.ndim == 0 else out


def linear_to_db(x):
    """Ratio (or mW) to dB (or dBm)."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise InvalidInputError("linear_to_db requires finite positive input")
    out = 10.0 * np.log10(arr)
    return float(out) if out.ndim == 0 else out
