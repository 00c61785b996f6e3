"""Fisher information and Cramer-Rao bounds for multi-source RSS localization.

Parameter order: ``[u_1, v_1, P_1, ..., u_K, v_K, P_K, gamma, beta_1, ..., beta_M]``.
Powers are either linear (mW) or dBm; the dBm form rescales the power
derivatives by ``P ln10 / 10``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError
from .propagation import NEAR_FIELD_FLOOR, as_points, check_gamma, distance_matrix

COND_MAX = 1e14


@dataclass(frozen=True)
class ParameterVector:
    sources: np.ndarray  # (K, 2)
    powers: np.ndarray  # (K,) mW
    gamma: float
    beta: np.ndarray  # (M,)
    power_param: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "sources", as_points(self.sources))
        object.__setattr__(self, "powers", np.asarray(self.powers, dtype=float).reshape(-1))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        if len(self.powers) != len(self.sources):
            raise InvalidInputError("one power per source required")
        if np.any(self.powers <= 0):
            raise InvalidInputError("powers must be positive")
        if np.any(self.beta <= 0) or not np.all(np.isfinite(self.beta)):
            raise InvalidInputError("noise precisions must be finite and positive")
        if self.power_param not in ("linear", "dB"):
            raise InvalidInputError("power_param must be 'linear' or 'dB'")
        check_gamma(self.gamma)

    @property
    def K(self) -> int:
        return len(self.sources)

    @property
    def M(self) -> int:
        return len(self.beta)

    def as_vector(self) -> np.ndarray:
        p = 10.0 * np.log10(self.powers) if self.power_param == "dB" else self.powers
        signal = np.column_stack([self.sources, p]).ravel()
        return np.concatenate([signal, [self.gamma], self.beta])

    def labels(self) -> list:
        p = "P_dB" if self.power_param == "dB" else "P"
        names = [f"{n}{k + 1}" for k in range(self.K) for n in ("u", "v", p)]
        return names + ["gamma"] + [f"beta{j + 1}" for j in range(self.M)]

    @classmethod
    def from_scene(cls, scene, power_param: str = "dB") -> "ParameterVector":
        """Truth at the scene's time-averaged powers and noise precisions."""
        if np.any(scene.noise_sigmas <= 0):
            raise InvalidInputError("CRLB needs strictly positive noise levels")
        return cls(scene.sources, scene.powers.mean(axis=1), scene.gamma_true, scene.noise_sigmas**-2.0, power_param)


@dataclass
class CrlbReport:
    fim: np.ndarray
    crlb_diag: np.ndarray
    location_bound: float
    power_bound: float
    ple_bound: float
    singular: bool = False
    labels: tuple = ()

    def to_dict(self) -> dict:
        return {
            "crlb_diag": self.crlb_diag.tolist(),
            "labels": list(self.labels),
            "location_bound": self.location_bound,
            "power_bound": self.power_bound,
            "ple_bound": self.ple_bound,
            "singular": self.singular,
        }


def mean_response(theta: ParameterVector, sensors) -> np.ndarray:
    """Noiseless expected reading at each sensor."""
    d = np.maximum(distance_matrix(sensors, theta.sources), NEAR_FIELD_FLOOR)
    return d**-theta.gamma @ theta.powers


def signal_jacobian(theta: ParameterVector, sensors, strict: bool = True) -> np.ndarray:
    """``d mu / d theta`` for the 3K + 1 location/power/PLE parameters; shape (M, 3K+1).

    A source within the near-field floor of a sensor raises unless
    ``strict=False``, in which case that pair contributes the floored model's
    derivatives: zero for location and PLE, unit gain for power.
    """
    s = as_points(sensors)
    du = theta.sources[None, :, 0] - s[:, None, 0]
    dv = theta.sources[None, :, 1] - s[:, None, 1]
    d = np.hypot(du, dv)
    inside = d <= NEAR_FIELD_FLOOR
    if strict and inside.any():
        raise InvalidInputError("a source lies within the near-field floor of a sensor; derivative undefined")
    d = np.where(inside, 1.0, d)
    du = np.where(inside, 0.0, du)
    dv = np.where(inside, 0.0, dv)
    g = theta.gamma
    f = d**-g
    P = theta.powers
    cols = np.empty((len(s), theta.K, 3))
    cols[:, :, 0] = -g * P * du / d ** (g + 2.0)
    cols[:, :, 1] = -g * P * dv / d ** (g + 2.0)
    cols[:, :, 2] = f * (P * np.log(10.0) / 10.0 if theta.power_param == "dB" else 1.0)
    d_gamma = -np.sum(P * np.log(d) * f, axis=1)
    return np.column_stack([cols.reshape(len(s), -1), d_gamma])


def fim(theta: ParameterVector, sensors, T: int, strict: bool = True) -> np.ndarray:
    """Fisher information of T i.i.d. snapshots; block-diagonal in (signal, noise)."""
    sensors = as_points(sensors)
    if len(sensors) != theta.M:
        raise InvalidInputError("one noise precision per sensor required")
    G = signal_jacobian(theta, sensors, strict)
    n_sig = G.shape[1]
    J = np.zeros((n_sig + theta.M, n_sig + theta.M))
    S = T * (G.T * theta.beta) @ G
    J[:n_sig, :n_sig] = 0.5 * (S + S.T)
    J[n_sig:, n_sig:] = np.diag(T / (2.0 * theta.beta**2))
    return J


def _equilibrated_inverse(J: np.ndarray):
    """Inverse via Jacobi scaling; falls back to a pseudo-inverse when ill-posed."""
    d = np.sqrt(np.abs(np.diag(J)))
    zero = d == 0
    d = np.where(zero, 1.0, d)
    scaled = J / np.outer(d, d)
    if zero.any() or np.linalg.cond(scaled) >= COND_MAX:
        return np.linalg.pinv(scaled) / np.outer(d, d), True
    return np.linalg.inv(scaled) / np.outer(d, d), False


def crlb_bounds(J: np.ndarray, K: int, labels=()) -> CrlbReport:
    """Diagonal of ``J^-1`` and RMSE-style grouped bounds.

    The signal and noise blocks are inverted separately (they do not couple).
    ``K = 0`` means J holds only noise precisions.
    """
    n_sig = 3 * K + 1 if K > 0 else 0
    diag = np.empty(J.shape[0])
    singular = False
    if n_sig:
        inv, singular = _equilibrated_inverse(J[:n_sig, :n_sig])
        diag[:n_sig] = np.diag(inv)
    noise = np.diag(J)[n_sig:]
    if np.any(noise <= 0):
        singular = True
    with np.errstate(divide="ignore"):
        diag[n_sig:] = np.where(noise > 0, 1.0 / noise, np.inf)
    diag = np.maximum(diag, 0.0)
    if K > 0:
        sig = diag[: 3 * K].reshape(K, 3)
        loc = float(np.sqrt(np.mean(sig[:, 0] + sig[:, 1])))
        pwr = float(np.sqrt(np.mean(sig[:, 2])))
        ple = float(np.sqrt(diag[3 * K]))
    else:
        loc = pwr = ple = float("nan")
    return CrlbReport(J, diag, loc, pwr, ple, singular, tuple(labels))


def scene_crlb(scene, power_param: str = "dB", strict: bool = True) -> CrlbReport:
    theta = ParameterVector.from_scene(scene, power_param)
    J = fim(theta, scene.sensors, scene.T, strict)
    return crlb_bounds(J, theta.K, theta.labels())
