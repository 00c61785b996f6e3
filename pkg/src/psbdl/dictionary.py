"""Parametric localization dictionary over a movable grid of candidate points."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractViolation, InvalidInputError
from .propagation import GAMMA_MAX, GAMMA_MIN, as_points, check_gamma, gain_and_partials


@dataclass(frozen=True)
class GridSpec:
    points: np.ndarray  # (N, 2)
    spacing: float
    area: float
    granularity: int = 0

    @property
    def N(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray) -> "GridSpec":
        return replace(self, points=points)


@dataclass(frozen=True)
class OffsetBounds:
    lb_u: np.ndarray
    ub_u: np.ndarray
    lb_v: np.ndarray
    ub_v: np.ndarray
    lb_gamma: float
    ub_gamma: float

    def __post_init__(self):
        for lo, hi in ((self.lb_u, self.ub_u), (self.lb_v, self.ub_v)):
            if np.any(np.asarray(lo) > 0) or np.any(np.asarray(hi) < 0):
                raise InvalidInputError("offset bounds must bracket zero")
        if self.lb_gamma > 0 or self.ub_gamma < 0:
            raise InvalidInputError("gamma offset bounds must bracket zero")

    @classmethod
    def uniform(cls, n: int, half_width: float, gamma_step: float) -> "OffsetBounds":
        lo = np.full(n, -half_width)
        hi = np.full(n, half_width)
        return cls(lo, hi, lo.copy(), hi.copy(), -gamma_step, gamma_step)

    def within(self, grid: "GridSpec", gamma: float) -> "OffsetBounds":
        """Tighten so every step keeps points inside the area and gamma in range."""
        u, v = grid.points[:, 0], grid.points[:, 1]
        return OffsetBounds(
            np.maximum(self.lb_u, -u),
            np.minimum(self.ub_u, grid.area - u),
            np.maximum(self.lb_v, -v),
            np.minimum(self.ub_v, grid.area - v),
            max(self.lb_gamma, GAMMA_MIN - gamma),
            min(self.ub_gamma, GAMMA_MAX - gamma),
        )

    def subset(self, idx) -> "OffsetBounds":
        idx = np.asarray(idx, dtype=int)
        return OffsetBounds(
            self.lb_u[idx], self.ub_u[idx], self.lb_v[idx], self.ub_v[idx], self.lb_gamma, self.ub_gamma
        )

    def contains(self, du, dv, dgamma, tol: float = 1e-12) -> bool:
        return bool(
            np.all(du >= self.lb_u - tol)
            and np.all(du <= self.ub_u + tol)
            and np.all(dv >= self.lb_v - tol)
            and np.all(dv <= self.ub_v + tol)
            and self.lb_gamma - tol <= dgamma <= self.ub_gamma + tol
        )


@dataclass(frozen=True)
class DeltaSolution:
    """Grid offsets for the active points plus the PLE offset."""

    du: np.ndarray
    dv: np.ndarray
    dgamma: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "DeltaSolution":
        return cls(np.zeros(n), np.zeros(n), 0.0)

    def max_abs(self) -> float:
        parts = [abs(self.dgamma)]
        if self.du.size:
            parts += [np.max(np.abs(self.du)), np.max(np.abs(self.dv))]
        return float(max(parts))


@dataclass(frozen=True)
class ParametricDictionary:
    grid: GridSpec
    gamma: float
    phi0: np.ndarray
    dphi_u: np.ndarray
    dphi_v: np.ndarray
    dphi_gamma: np.ndarray

    @property
    def shape(self):
        return self.phi0.shape


def init_uniform_grid(area: float, granularity: int) -> GridSpec:
    """Cell-centred ``granularity x granularity`` lattice over ``[0, area]^2``."""
    if granularity < 2:
        raise InvalidInputError("granularity must be at least 2")
    r = area / granularity
    axis = (np.arange(granularity) + 0.5) * r
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    return GridSpec(points=pts, spacing=r, area=float(area), granularity=granularity)


def assemble_dictionary(grid: GridSpec, gamma: float, sensors) -> ParametricDictionary:
    """Gain matrix at the grid and its derivatives w.r.t. each point's u, v and gamma."""
    check_gamma(gamma)
    phi0, du, dv, dg = gain_and_partials(as_points(sensors), grid.points, gamma)
    return ParametricDictionary(grid, float(gamma), phi0, du, dv, dg)


def linearized_dictionary(d: ParametricDictionary, du, dv, dgamma: float, bounds: OffsetBounds | None = None):
    """First-order dictionary ``phi0 + dphi_u diag(du) + dphi_v diag(dv) + dgamma dphi_gamma``."""
    du = np.asarray(du, dtype=float)
    dv = np.asarray(dv, dtype=float)
    if bounds is not None and not bounds.contains(du, dv, dgamma):
        raise ContractViolation("offsets outside their bounds")
    phi = d.phi0 + d.dphi_u * du + d.dphi_v * dv
    if dgamma:
        phi = phi + dgamma * d.dphi_gamma
    return phi


def apply_offsets(grid: GridSpec, gamma: float, solution: DeltaSolution, active) -> tuple[GridSpec, float]:
    """Move the active grid points by the solved offsets and step gamma.

    Points are clamped to the area and gamma to ``[2, 6]``; inactive points
    are untouched.
    """
    active = np.asarray(active, dtype=int)
    pts = grid.points.copy()
    if active.size:
        pts[active, 0] += solution.du
        pts[active, 1] += solution.dv
        pts[active] = np.clip(pts[active], 0.0, grid.area)
    new_gamma = float(np.clip(gamma + solution.dgamma, GAMMA_MIN, GAMMA_MAX))
    return grid.with_points(pts), new_gamma
