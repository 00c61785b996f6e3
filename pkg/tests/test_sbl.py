import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import multivariate_normal

from psbdl.exceptions import InvalidInputError
from psbdl.sbl import (
    HyperParams,
    compute_posterior,
    em_sweep,
    init_hyperparams,
    log_evidence,
    penalized_log_evidence,
    second_moments,
    update_alpha,
    update_beta,
)


def _instance(rng, M=4, N=6, T=3):
    phi = rng.uniform(0, 1, (M, N))
    alpha = rng.uniform(0.1, 2, N)
    beta = rng.uniform(0.5, 5, M)
    Y = rng.normal(size=(M, T))
    return phi, alpha, beta, Y


def _direct(phi, alpha, beta, Y):
    sigma = np.linalg.inv(phi.T @ np.diag(beta) @ phi + np.diag(1 / alpha))
    mu = sigma @ phi.T @ np.diag(beta) @ Y
    return sigma, mu


def test_identity_posterior():
    Y = np.arange(6.0).reshape(3, 2)
    st_ = compute_posterior(np.eye(3), np.ones(3), np.ones(3), Y)
    np.testing.assert_allclose(st_.sigma, 0.5 * np.eye(3), atol=1e-15)
    np.testing.assert_allclose(st_.means, 0.5 * Y, atol=1e-15)


def test_small_alpha_pins_means_to_zero(rng):
    phi, _, beta, Y = _instance(rng)
    st_ = compute_posterior(phi, np.full(6, 1e-14), beta, Y)
    assert np.abs(st_.means).max() < 1e-12


@pytest.mark.parametrize("shape", [(4, 6), (10, 50), (20, 35), (8, 5), (30, 30)])
def test_woodbury_matches_direct(rng, shape):
    M, N = shape
    phi, alpha, beta, Y = _instance(rng, M, N, 4)
    st_ = compute_posterior(phi, alpha, beta, Y)
    sigma, mu = _direct(phi, alpha, beta, Y)
    assert np.linalg.norm(st_.sigma - sigma) <= 1e-8 * np.linalg.norm(sigma)
    assert np.linalg.norm(st_.means - mu) <= 1e-8 * np.linalg.norm(mu)
    np.testing.assert_allclose(st_.residuals, Y - phi @ mu, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(st_.delta_cov, phi @ sigma @ phi.T, rtol=1e-8, atol=1e-12)


def test_woodbury_with_wide_precision_range(rng):
    phi, alpha, _, Y = _instance(rng, 6, 20, 3)
    beta = np.logspace(-2, 10, 6)
    st_ = compute_posterior(phi, alpha, beta, Y)
    # double-precision direct inversion is the weak side here, so use 50 digits
    with mpmath.workdps(50):
        P = mpmath.matrix(phi.tolist())
        H = P.T * mpmath.diag([mpmath.mpf(b) for b in beta]) * P + mpmath.diag([1 / mpmath.mpf(a) for a in alpha])
        sigma = np.array((H**-1).tolist(), dtype=float)
    assert np.linalg.norm(st_.sigma - sigma) <= 1e-8 * np.linalg.norm(sigma)


def test_posterior_symmetric_psd(rng):
    phi, alpha, beta, Y = _instance(rng, 5, 30, 2)
    s = compute_posterior(phi, alpha, beta, Y).sigma
    np.testing.assert_array_equal(s, s.T)
    assert np.linalg.eigvalsh(s).min() > -1e-12


def test_posterior_rejects_nonpositive(rng):
    phi, alpha, beta, Y = _instance(rng)
    with pytest.raises(InvalidInputError):
        compute_posterior(phi, -alpha, beta, Y)


class _State:
    def __init__(self, S, T):
        self.T = T
        self.sigma = np.diag(S / T)
        self.means = np.zeros((len(S), T))


def test_alpha_arithmetic():
    a = update_alpha(_State(np.array([2.0]), 1), lam=1.0)
    assert a[0] == pytest.approx(1.0, rel=1e-15)


def test_alpha_small_lambda_limit():
    S = np.array([0.3, 4.0, 17.0])
    np.testing.assert_allclose(update_alpha(_State(S, 5), lam=1e-12), S / 5, rtol=1e-9)


@given(st.integers(1, 50), st.floats(1e-4, 1e3), st.floats(1e-6, 1e6))
def test_alpha_is_positive_root(T, lam, S):
    a = update_alpha(_State(np.array([S]), T), lam=lam)[0]
    root = brentq(lambda x: lam * x * x + T * x - S, 0.0, S / T + 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    assert a == pytest.approx(root, rel=1e-10)


def test_alpha_floor():
    assert update_alpha(_State(np.array([0.0]), 3), lam=1.0)[0] == 1e-12


def test_beta_examples(rng):
    phi, alpha, beta, Y = _instance(rng)
    st_ = compute_posterior(phi, alpha, beta, Y)
    T = Y.shape[1]
    denom = np.sum(st_.residuals**2, axis=1) + T * np.diag(st_.delta_cov)
    np.testing.assert_allclose(update_beta(Y, phi, st_, 1.0, 0.0), T / denom, rtol=1e-14)

    class S:
        residuals = np.array([[1.0, 1.0]])
        delta_cov = np.zeros((1, 1))

    assert update_beta(np.zeros((1, 2)), None, S, 1.0, 1.0)[0] == pytest.approx(0.5)


def test_beta_cap_on_perfect_fit():
    class S:
        residuals = np.zeros((2, 3))
        delta_cov = np.zeros((2, 2))

    np.testing.assert_array_equal(update_beta(np.zeros((2, 3)), None, S, 1.0, 0.0, cap=1e12), [1e12, 1e12])


@pytest.mark.parametrize("seed", range(5))
def test_beta_maximises_q(seed):
    rng = np.random.default_rng(seed)
    phi, alpha, beta, Y = _instance(rng, 3, 5, 4)
    a, b = rng.uniform(0.5, 3), rng.uniform(0, 1)
    T = Y.shape[1]
    st_ = compute_posterior(phi, alpha, beta, Y)
    new = update_beta(Y, phi, st_, a, b)
    E = np.sum(st_.residuals**2, axis=1) + T * np.diag(st_.delta_cov)
    for j in range(3):
        grid = np.linspace(new[j] * 0.2, new[j] * 5, 200001)
        q = (a - 1 + T / 2) * np.log(grid) - 0.5 * grid * E[j] - b * grid
        best = grid[np.argmax(q)]
        assert abs(best - new[j]) <= 2 * (grid[1] - grid[0])
        q_new = (a - 1 + T / 2) * np.log(new[j]) - 0.5 * new[j] * E[j] - b * new[j]
        assert q_new >= q.max() - 1e-12 * abs(q.max())


def test_hyperparam_checks():
    HyperParams(1e-2, 1.0, 1e-6).check(1)
    with pytest.raises(InvalidInputError):
        HyperParams(0.0).check(3)
    with pytest.raises(InvalidInputError):
        HyperParams(1.0, a=-1.0).check(2)
    with pytest.raises(InvalidInputError):
        HyperParams(1.0, b=-1.0).check(2)


def test_init_hyperparams(rng):
    Y = rng.normal(size=(4, 6))
    a, b = init_hyperparams(Y, 9)
    np.testing.assert_array_equal(a, np.ones(9))
    np.testing.assert_allclose(b, 1 / Y.var(axis=1))
    _, b = init_hyperparams(np.ones((2, 3)), 4)
    assert np.all(np.isfinite(b)) and np.all(b > 0)


def test_evidence_zero_dictionary(rng):
    Y = rng.normal(size=(4, 3))
    ll = log_evidence(Y, np.zeros((4, 6)), np.ones(6), np.ones(4))
    assert ll == pytest.approx(np.sum(-0.5 * Y**2 - 0.5 * np.log(2 * np.pi)), rel=1e-12)


def test_evidence_dense_oracle(rng):
    phi, alpha, beta, Y = _instance(rng, 4, 6, 3)
    C = np.diag(1 / beta) + phi @ np.diag(alpha) @ phi.T
    oracle = sum(multivariate_normal(np.zeros(4), C).logpdf(Y[:, t]) for t in range(3))
    assert log_evidence(Y, phi, alpha, beta) == pytest.approx(oracle, abs=1e-10)
    assert compute_posterior(phi, alpha, beta, Y).log_evidence == pytest.approx(oracle, abs=1e-10)
    # the N <= M branch too
    phi2, alpha2, beta2, Y2 = _instance(rng, 6, 4, 3)
    C2 = np.diag(1 / beta2) + phi2 @ np.diag(alpha2) @ phi2.T
    oracle2 = sum(multivariate_normal(np.zeros(6), C2).logpdf(Y2[:, t]) for t in range(3))
    assert compute_posterior(phi2, alpha2, beta2, Y2).log_evidence == pytest.approx(oracle2, abs=1e-10)


def test_evidence_permutation_invariant(rng):
    phi, alpha, beta, Y = _instance(rng)
    p = rng.permutation(6)
    assert log_evidence(Y, phi[:, p], alpha[p], beta, ) == pytest.approx(log_evidence(Y, phi, alpha, beta), rel=1e-13)


@given(st.integers(0, 10**6))
def test_em_sweep_keeps_hyperparameters_positive(seed):
    rng = np.random.default_rng(seed)
    phi, alpha, beta, Y = _instance(rng, 5, 12, 2)
    hp = HyperParams()
    for _ in range(20):
        alpha, beta, _ = em_sweep(Y, phi, alpha, beta, hp)
        assert np.all(alpha > 0) and np.all(beta > 0)


def test_em_sweep_ascends(rng):
    phi, alpha, beta, Y = _instance(rng, 6, 15, 3)
    hp = HyperParams()
    prev = penalized_log_evidence(Y, phi, alpha, beta, hp)
    for _ in range(50):
        alpha, beta, _ = em_sweep(Y, phi, alpha, beta, hp)
        cur = penalized_log_evidence(Y, phi, alpha, beta, hp)
        assert cur >= prev - 1e-9 * abs(prev)
        prev = cur


def test_second_moments(rng):
    phi, alpha, beta, Y = _instance(rng)
    s = compute_posterior(phi, alpha, beta, Y)
    np.testing.assert_allclose(second_moments(s), 3 * np.diag(s.sigma) + np.sum(s.means**2, axis=1))


# matrix identities the offset quadratic is built on


@given(st.integers(0, 10**6))
def test_identity_diag_swap(seed):
    rng = np.random.default_rng(seed)
    v, u = rng.normal(size=(2, 7))
    np.testing.assert_allclose(v @ np.diag(u), u @ np.diag(v), atol=1e-12)


@given(st.integers(0, 10**6))
def test_identity_diag_sandwich(seed):
    rng = np.random.default_rng(seed)
    v, u = rng.normal(size=(2, 6))
    Mx = rng.normal(size=(6, 6))
    np.testing.assert_allclose(np.diag(v) @ Mx @ np.diag(u), Mx * np.outer(v, u), atol=1e-12)


@given(st.integers(0, 10**6))
def test_identity_trace_hadamard(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=5) + 1j * rng.normal(size=5)
    u = rng.normal(size=4) + 1j * rng.normal(size=4)
    Q = rng.normal(size=(5, 4)) + 1j * rng.normal(size=(5, 4))
    R = rng.normal(size=(5, 4))
    lhs = np.trace(np.diag(v).conj().T @ Q @ np.diag(u) @ R.T)
    rhs = v.conj() @ (Q * R) @ u
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
