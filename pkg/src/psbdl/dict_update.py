"""Box-constrained quadratic for the grid/PLE offsets and its block-coordinate solver.

The objective is

    f(d) = du' Muu du + dv' Mvv dv + p dg^2 + 2 du' Muv dv
           + 2 dg (v_ug' du + v_vg' dv) + 2 v_u' du + 2 v_v' dv + 2 q dg

i.e. the expected B-weighted residual energy of the linearised dictionary,
up to a constant that does not depend on the offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dictionary import DeltaSolution, OffsetBounds, ParametricDictionary
from .sbl import PosteriorState

COND_MAX = 1e12


@dataclass(frozen=True)
class LlsqCoefficients:
    m_uu: np.ndarray
    m_vv: np.ndarray
    m_uv: np.ndarray
    v_ugamma: np.ndarray
    v_vgamma: np.ndarray
    v_u: np.ndarray
    v_v: np.ndarray
    p: float
    q: float

    @property
    def size(self) -> int:
        return len(self.v_u)


def active_set(alpha: np.ndarray, K: int) -> np.ndarray:
    """Indices of the ``K`` largest alphas (ties go to the lower index), ascending."""
    if K < 1:
        raise ValueError("K must be >= 1")
    alpha = np.asarray(alpha)
    order = np.argsort(-alpha, kind="stable")
    return np.sort(order[: min(K, len(alpha))])


def assemble_llsq(d: ParametricDictionary, state: PosteriorState, Y: np.ndarray, active) -> LlsqCoefficients:
    """Quadratic coefficients restricted to the active grid points.

    Offsets of inactive points are held at zero, so the u/v blocks shrink to
    the active set.  Terms coupling to the PLE offset still sum over every
    column, since a PLE step perturbs the whole dictionary.
    """
    S = np.asarray(active, dtype=int)
    Y = np.atleast_2d(Y)
    T = Y.shape[1]
    beta = state.beta
    U = state.means
    sigma = state.sigma

    pu = d.dphi_u[:, S]
    pv = d.dphi_v[:, S]
    pg = d.dphi_gamma
    bpu = beta[:, None] * pu
    bpv = beta[:, None] * pv
    bpg = beta[:, None] * pg

    H_rows = T * sigma[S, :] + U[S, :] @ U.T  # (K', N) rows of T Sigma + U U'
    H_ss = H_rows[:, S]

    m_uu = (pu.T @ bpu) * H_ss
    m_vv = (pv.T @ bpv) * H_ss
    m_uv = (pu.T @ bpv) * H_ss
    v_ug = np.sum((bpu.T @ pg) * H_rows, axis=1)
    v_vg = np.sum((bpv.T @ pg) * H_rows, axis=1)

    resid0 = Y - d.phi0 @ U
    v_u = T * np.sum((bpu.T @ d.phi0) * sigma[S, :], axis=1) - np.sum(U[S, :] * (bpu.T @ resid0), axis=1)
    v_v = T * np.sum((bpv.T @ d.phi0) * sigma[S, :], axis=1) - np.sum(U[S, :] * (bpv.T @ resid0), axis=1)

    pg_sigma = pg @ sigma
    pg_U = pg @ U
    p = T * np.sum(pg_sigma * bpg) + np.sum(beta[:, None] * pg_U**2)
    q = T * np.sum((d.phi0 @ sigma) * bpg) - np.sum(resid0 * (beta[:, None] * pg_U))
    return LlsqCoefficients(
        0.5 * (m_uu + m_uu.T), 0.5 * (m_vv + m_vv.T), m_uv, v_ug, v_vg, v_u, v_v, float(p), float(q)
    )


def llsq_objective(c: LlsqCoefficients, du, dv, dgamma: float) -> float:
    du = np.asarray(du, dtype=float)
    dv = np.asarray(dv, dtype=float)
    return float(
        du @ c.m_uu @ du
        + dv @ c.m_vv @ dv
        + c.p * dgamma**2
        + 2.0 * du @ c.m_uv @ dv
        + 2.0 * dgamma * (c.v_ugamma @ du + c.v_vgamma @ dv)
        + 2.0 * (c.v_u @ du + c.v_v @ dv)
        + 2.0 * c.q * dgamma
    )


class _Block:
    """One offset block ``x'Hx + 2 rhs'x`` with its factorisation cached."""

    def __init__(self, H: np.ndarray, lb: np.ndarray, ub: np.ndarray):
        self.H = H
        self.lb = lb
        self.ub = ub
        self.factor = _factor(H)

    def update(self, rhs: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.factor is not None:
            x_star = -linalg.cho_solve(self.factor, rhs, check_finite=False)
            if np.all(x_star >= self.lb) and np.all(x_star <= self.ub):
                return x_star
        return _coordinate_block(self.H, rhs, x, self.lb, self.ub)


def _factor(H: np.ndarray):
    """Cholesky factor of H if it is positive definite with condition < 1e12, else None."""
    if H.size == 0:
        return None
    try:
        L = linalg.cholesky(H, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None
    diag = np.diag(L)
    if diag.min() <= 0 or (diag.max() / diag.min()) ** 2 >= COND_MAX:
        return None
    return L, True


def _coordinate_block(H: np.ndarray, rhs: np.ndarray, x: np.ndarray, lb, ub, passes: int = 50) -> np.ndarray:
    """Minimise ``x'Hx + 2 rhs'x`` over a box, one coordinate at a time."""
    x = x.copy()
    for _ in range(passes):
        moved = 0.0
        for i in range(len(x)):
            g = H[i] @ x - H[i, i] * x[i] + rhs[i]
            if H[i, i] > 0:
                new = min(max(-g / H[i, i], lb[i]), ub[i])
            elif g > 0:
                new = lb[i]
            elif g < 0:
                new = ub[i]
            else:
                new = 0.0  # flat coordinate: take the minimum-norm point
            moved = max(moved, abs(new - x[i]))
            x[i] = new
        if moved <= 1e-15 * (1.0 + np.max(np.abs(x))):
            break
    return x


def _full_system(c: LlsqCoefficients, fix_gamma: bool):
    """Stack the quadratic as ``x'Hx + 2g'x`` over ``x = [du, dv, dgamma]``."""
    n = c.size
    m = 2 * n if fix_gamma else 2 * n + 1
    H = np.zeros((m, m))
    H[:n, :n] = c.m_uu
    H[:n, n : 2 * n] = c.m_uv
    H[n : 2 * n, :n] = c.m_uv.T
    H[n : 2 * n, n : 2 * n] = c.m_vv
    g = np.concatenate([c.v_u, c.v_v])
    if not fix_gamma:
        H[:n, -1] = H[-1, :n] = c.v_ugamma
        H[n : 2 * n, -1] = H[-1, n : 2 * n] = c.v_vgamma
        H[-1, -1] = c.p
        g = np.append(g, c.q)
    return H, g


def _kkt_polish(H, g, x, lo, hi):
    """Exact minimiser given the bound pattern of ``x``, or None if that pattern is wrong.

    Variables on a bound stay there, the rest solve the reduced system.  The
    result is accepted only if it is feasible and the gradient points out of
    the box at every bound-held variable.
    """
    span = np.maximum(hi - lo, 1e-300)
    at_lo = x <= lo + 1e-12 * span
    at_hi = x >= hi - 1e-12 * span
    free = ~(at_lo | at_hi)
    y = np.where(at_lo, lo, np.where(at_hi, hi, x))
    if free.any():
        factor = _factor(H[np.ix_(free, free)])
        if factor is None:
            return None
        rhs = g[free] + H[np.ix_(free, ~free)] @ y[~free]
        y[free] = -linalg.cho_solve(factor, rhs, check_finite=False)
        if np.any(y[free] < lo[free]) or np.any(y[free] > hi[free]):
            return None
    grad = H @ y + g
    scale = 1e-9 * (np.abs(H) @ np.abs(y) + np.abs(g) + 1e-300)
    if np.any(grad[at_lo] < -scale[at_lo]) or np.any(grad[at_hi] > scale[at_hi]):
        return None
    return y


def solve_llsq(
    c: LlsqCoefficients,
    bounds: OffsetBounds,
    init: DeltaSolution | None = None,
    tol: float = 1e-10,
    max_sweeps: int = 100,
    fix_gamma: bool = False,
    info: dict | None = None,
) -> DeltaSolution:
    """Cycle exact box-constrained minimisations over du, dv, dgamma.

    Each block takes the unconstrained minimiser when it is feasible and
    falls back to clamped coordinate updates otherwise.  After every sweep
    the bound pattern is tested for optimality (reduced solve plus KKT sign
    check); once it holds, the exact minimiser is returned instead of
    crawling towards it.  ``fix_gamma`` pins the PLE offset to zero.
    Diagnostics go into ``info`` when given.
    """
    n = c.size
    H, g = _full_system(c, fix_gamma)
    lo = np.concatenate([bounds.lb_u, bounds.lb_v] + ([] if fix_gamma else [[bounds.lb_gamma]]))
    hi = np.concatenate([bounds.ub_u, bounds.ub_v] + ([] if fix_gamma else [[bounds.ub_gamma]]))

    def objective(x):
        return float(x @ H @ x + 2.0 * g @ x)

    def done(x, sweeps, degenerate=False):
        if info is not None:
            info.update(sweeps=sweeps, objective=objective(x), degenerate_gamma=degenerate)
        return DeltaSolution(x[:n].copy(), x[n : 2 * n].copy(), 0.0 if fix_gamma else float(x[-1]))

    factor = _factor(H)
    if factor is not None:
        x = -linalg.cho_solve(factor, g, check_finite=False)
        if np.all(x >= lo) and np.all(x <= hi):
            return done(x, 0)

    init = init if init is not None else DeltaSolution.zeros(n)
    du = np.clip(np.asarray(init.du, dtype=float), bounds.lb_u, bounds.ub_u)
    dv = np.clip(np.asarray(init.dv, dtype=float), bounds.lb_v, bounds.ub_v)
    dg = 0.0 if fix_gamma else float(np.clip(init.dgamma, bounds.lb_gamma, bounds.ub_gamma))
    u_block = _Block(c.m_uu, bounds.lb_u, bounds.ub_u)
    v_block = _Block(c.m_vv, bounds.lb_v, bounds.ub_v)
    degenerate_gamma = False

    def pack():
        return np.concatenate([du, dv] + ([] if fix_gamma else [[dg]]))

    f_old = objective(pack())
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        du = u_block.update(c.m_uv @ dv + dg * c.v_ugamma + c.v_u, du)
        dv = v_block.update(c.m_uv.T @ du + dg * c.v_vgamma + c.v_v, dv)
        if not fix_gamma:
            lin = c.v_ugamma @ du + c.v_vgamma @ dv + c.q
            if c.p > 0:
                dg = float(np.clip(-lin / c.p, bounds.lb_gamma, bounds.ub_gamma))
            else:
                degenerate_gamma = lin != 0
                dg = bounds.lb_gamma if lin > 0 else (bounds.ub_gamma if lin < 0 else 0.0)
        x = pack()
        polished = _kkt_polish(H, g, x, lo, hi)
        if polished is not None and objective(polished) <= objective(x):
            return done(polished, sweeps, degenerate_gamma)
        f_new = objective(x)
        if f_old - f_new <= tol * max(abs(f_old), abs(f_new), 1e-300):
            break
        f_old = f_new
    return done(pack(), sweeps, degenerate_gamma)
