"""Gaussian posterior, EM hyperparameter updates and evidence for MMV sparse Bayesian learning.

Model: ``y(t) = Phi x(t) + e(t)`` with ``x(t) ~ N(0, diag(alpha))``,
``e(t) ~ N(0, diag(beta)^-1)``, ``alpha_i ~ Gamma(1, lam/2)`` and
``beta_j ~ Gamma(a, b)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .exceptions import InvalidInputError

ALPHA_FLOOR = 1e-12
BETA_CAP = 1e12
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class HyperParams:
    lam: float = 1e-2
    a: float = 1.0
    b: float = 1e-6

    def check(self, T: int) -> None:
        if not self.lam > 0:
            raise InvalidInputError("lambda must be positive")
        if not 2 * self.a - 2 + T > 0:
            raise InvalidInputError(f"need 2a - 2 + T > 0 (a={self.a}, T={T})")
        if self.b < 0:
            raise InvalidInputError("b must be non-negative")


@dataclass(frozen=True)
class PosteriorState:
    alpha: np.ndarray  # (N,)
    beta: np.ndarray  # (M,)
    sigma: np.ndarray  # (N, N)
    means: np.ndarray  # (N, T)
    residuals: np.ndarray  # (M, T)
    delta_cov: np.ndarray  # (M, M) = Phi Sigma Phi^T
    log_evidence: float = float("nan")
    jittered: bool = False

    @property
    def T(self) -> int:
        return self.means.shape[1]


def _cholesky(mat: np.ndarray):
    """Cholesky factor, retrying once with ``1e-10 tr/n`` diagonal jitter."""
    try:
        return linalg.cho_factor(mat, lower=True, check_finite=False), False
    except linalg.LinAlgError:
        n = mat.shape[0]
        jitter = 1e-10 * np.trace(mat) / n
        return linalg.cho_factor(mat + jitter * np.eye(n), lower=True), True


def compute_posterior(phi: np.ndarray, alpha: np.ndarray, beta: np.ndarray, Y: np.ndarray) -> PosteriorState:
    """Posterior covariance and means of X for fixed hyperparameters.

    For ``N > M`` the N x N inverse goes through the Woodbury form
    ``Sigma = A - A Phi^T Xi^-1 Phi A`` with ``Xi = B^-1 + Phi A Phi^T``.
    ``Xi`` is factorised in its symmetrically scaled form
    ``B^1/2 Xi B^1/2 = I + Psi Psi^T`` (``Psi = B^1/2 Phi A^1/2``), whose
    eigenvalues are all >= 1; per-sensor precisions here can span more than
    ten decades, which makes the unscaled ``Xi`` useless in floating point.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise InvalidInputError("alpha and beta must be strictly positive")
    M, N = phi.shape
    sa = np.sqrt(alpha)
    sb = np.sqrt(beta)
    psi = (sb[:, None] * phi) * sa[None, :]
    y_w = sb[:, None] * Y
    if N > M:
        xi = psi @ psi.T
        xi[np.diag_indices_from(xi)] += 1.0
        (L, lower), jittered = _cholesky(xi)
        W = linalg.solve_triangular(L, psi, lower=True, check_finite=False) * sa[None, :]
        sigma = -(W.T @ W)
        sigma[np.diag_indices_from(sigma)] += alpha
        z = linalg.solve_triangular(L, y_w, lower=True, check_finite=False)
        means = W.T @ z
        # Xi~^-1 from the factor: residual = B^-1/2 Xi~^-1 B^1/2 y, Delta = B^-1/2 (I - Xi~^-1) B^-1/2
        Linv = linalg.solve_triangular(L, np.eye(M), lower=True, check_finite=False)
        xi_inv = Linv.T @ Linv
        residuals = (xi_inv @ y_w) / sb[:, None]
        delta = -xi_inv
        delta[np.diag_indices_from(delta)] += 1.0
        delta = delta / np.outer(sb, sb)
        quad = np.sum(z**2)
    else:
        inner = psi.T @ psi
        inner[np.diag_indices_from(inner)] += 1.0
        (L, lower), jittered = _cholesky(inner)
        core = linalg.cho_solve((L, lower), np.eye(N), check_finite=False)
        sigma = core * np.outer(sa, sa)
        means = sa[:, None] * linalg.cho_solve((L, lower), psi.T @ y_w, check_finite=False)
        residuals = Y - phi @ means
        delta = phi @ sigma @ phi.T
        # y'C^-1 y = y~'y~ - |L^-1 Psi' y~|^2 by the push-through identity
        z = linalg.solve_triangular(L, psi.T @ y_w, lower=True, check_finite=False)
        quad = np.sum(y_w**2) - np.sum(z**2)
    T = Y.shape[1]
    # |B^-1 + Phi A Phi'| = |B|^-1 |I + Psi Psi'| = |B|^-1 |I + Psi' Psi|
    logdet = 2.0 * np.sum(np.log(np.diag(L))) - np.sum(np.log(beta))
    evidence = -0.5 * T * logdet - 0.5 * quad - 0.5 * M * T * _LOG_2PI
    sigma = 0.5 * (sigma + sigma.T)
    return PosteriorState(alpha, beta, sigma, means, residuals, 0.5 * (delta + delta.T), float(evidence), jittered)


def second_moments(state: PosteriorState) -> np.ndarray:
    """``S_i = sum_t (Sigma_ii + mu(t)_i^2)``."""
    return state.T * np.diag(state.sigma) + np.sum(state.means**2, axis=1)


def update_alpha(state: PosteriorState, lam: float, T: int | None = None, floor: float = ALPHA_FLOOR) -> np.ndarray:
    """Positive root of ``lam a^2 + T a - S = 0`` for every row."""
    T = state.T if T is None else T
    S = np.maximum(second_moments(state), 0.0)
    # 2S / (sqrt(T^2 + 4 lam S) + T) is the same root without cancellation
    alpha = 2.0 * S / (np.sqrt(T * T + 4.0 * lam * S) + T)
    return np.maximum(alpha, floor)


def update_beta(Y, phi, state: PosteriorState, a: float, b: float, cap=BETA_CAP) -> np.ndarray:
    """Noise precision M-step; ``cap`` may be a scalar or per-sensor vector."""
    T = np.atleast_2d(Y).shape[1]
    numer = 2.0 * a - 2.0 + T
    if numer <= 0:
        raise InvalidInputError("2a - 2 + T must be positive")
    denom = 2.0 * b + np.sum(state.residuals**2, axis=1) + T * np.diag(state.delta_cov)
    with np.errstate(divide="ignore"):
        beta = numer / np.maximum(denom, 0.0)
    return np.minimum(beta, cap)


def init_hyperparams(Y: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """alpha = 1 everywhere, beta from the per-sensor sample variance."""
    Y = np.atleast_2d(Y)
    var = Y.var(axis=1)
    floor = np.maximum(1e-12 * np.mean(Y**2, axis=1), np.finfo(float).tiny)
    return np.ones(N), 1.0 / np.maximum(var, floor)


def log_evidence(Y, phi, alpha, beta) -> float:
    """``sum_t log N(y(t) | 0, B^-1 + Phi A Phi^T)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    M, T = Y.shape
    sb = np.sqrt(beta)
    psi = (sb[:, None] * phi) * np.sqrt(alpha)[None, :]
    C = psi @ psi.T
    C[np.diag_indices_from(C)] += 1.0
    (L, lower), _ = _cholesky(C)
    logdet = 2.0 * np.sum(np.log(np.diag(L))) - np.sum(np.log(beta))
    z = linalg.solve_triangular(L, sb[:, None] * Y, lower=True, check_finite=False)
    return float(-0.5 * T * logdet - 0.5 * np.sum(z**2) - 0.5 * M * T * _LOG_2PI)


def log_prior(alpha, beta, hyper: HyperParams) -> float:
    """Log density of the Gamma hyperpriors on alpha and beta."""
    half = hyper.lam / 2.0
    lp = np.sum(np.log(half) - half * alpha)
    lp += np.sum((hyper.a - 1.0) * np.log(beta) - hyper.b * beta)
    if hyper.b > 0:
        lp += len(beta) * (hyper.a * np.log(hyper.b) - gammaln(hyper.a))
    return float(lp)


def penalized_log_evidence(Y, phi, alpha, beta, hyper: HyperParams) -> float:
    return log_evidence(Y, phi, alpha, beta) + log_prior(alpha, beta, hyper)


def em_sweep(Y, phi, alpha, beta, hyper: HyperParams, beta_cap=BETA_CAP):
    """One E-step plus joint alpha/beta M-step at fixed ``phi``."""
    state = compute_posterior(phi, alpha, beta, Y)
    return update_alpha(state, hyper.lam), update_beta(Y, phi, state, hyper.a, hyper.b, beta_cap), state
