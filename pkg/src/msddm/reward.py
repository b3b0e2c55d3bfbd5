"""Reward rate of a multistage DDM and its optimization over the threshold.

The reward rate ``RR(z) = P(upper) / (E[tau] + t_nd)`` can have several local
maxima once the drift changes between stages, so the optimizer scans a dense
grid, refines every interior local maximum by golden-section search and then
picks the best.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .aggregate import ModelSpec, summarize
from .core import DomainError, StageTheta
from .stages import DEFAULT_GRID

__all__ = [
    "OptimumResult",
    "RewardConfig",
    "SurfaceResult",
    "optimize_threshold",
    "reward_curve",
    "reward_rate",
    "threshold_surface",
    "two_stage_spec",
    "with_threshold",
]

Z_TOL = 1e-6


@dataclass(frozen=True)
class RewardConfig:
    t_nd: float = 0.3
    z_min: float = 0.01
    z_max: float = 0.4
    resolution: int = 2000
    grid_size: int = DEFAULT_GRID

    def __post_init__(self):
        if not 0 < self.z_min < self.z_max:
            raise DomainError("need 0 < z_min < z_max")
        if self.t_nd < 0:
            raise DomainError("t_nd must be nonnegative")
        if self.resolution < 3:
            raise DomainError("resolution must be >= 3")


def with_threshold(spec: ModelSpec, z: float) -> ModelSpec:
    """Same model with thresholds ``(-z, z)`` in every stage."""
    stages = tuple(replace(s, upper_threshold=z, lower_threshold=-z) for s in spec.stages)
    return ModelSpec(spec.x0, stages)


def two_stage_spec(a1: float, a2: float, sigma: float, t1: float, x0: float = 0.0,
                   z: float = 1.0) -> ModelSpec:
    """Two stages with a switch at ``t1``; ``t1 = 0`` collapses to the second stage alone."""
    if t1 < 0:
        raise DomainError("t1 must be nonnegative")
    second = StageTheta(a2, sigma, z, start_time=t1)
    if t1 == 0:
        return ModelSpec(x0, (second,))
    return ModelSpec(x0, (StageTheta(a1, sigma, z), second))


def reward_rate(z: float, spec: ModelSpec, cfg: RewardConfig) -> float:
    """Probability of an upper-boundary decision per unit of total trial time."""
    if not z > abs(spec.x0):
        raise DomainError("threshold must exceed |x0|")
    res = summarize(with_threshold(spec, z), cfg.grid_size)
    return (1.0 - res.overall_er) / (res.overall_mdt + cfg.t_nd)


def reward_curve(spec: ModelSpec, cfg: RewardConfig):
    """``(z, RR(z))`` on the configured grid (``nan`` where ``z <= |x0|``)."""
    zs = np.linspace(cfg.z_min, cfg.z_max, cfg.resolution)
    rr = np.array([reward_rate(z, spec, cfg) if z > abs(spec.x0) else math.nan for z in zs])
    return zs, rr


@dataclass(frozen=True)
class OptimumResult:
    z_star: float
    rr_star: float
    local_maxima: tuple[tuple[float, float], ...]
    at_boundary: bool


def _interior_peaks(rr: np.ndarray) -> list[int]:
    peaks = []
    for i in range(1, len(rr) - 1):
        if rr[i] > rr[i - 1] and rr[i] >= rr[i + 1]:
            peaks.append(i)
    return peaks


def optimize_threshold(spec: ModelSpec, cfg: RewardConfig) -> OptimumResult:
    """Global reward-rate maximum over ``[z_min, z_max]`` plus all interior local maxima."""
    zs, rr = reward_curve(spec, cfg)
    maxima = []
    for i in _interior_peaks(rr):
        f = lambda z: -reward_rate(z, spec, cfg)  # noqa: E731
        res = minimize_scalar(f, bracket=(zs[i - 1], zs[i], zs[i + 1]), method="golden",
                              options={"xtol": Z_TOL / zs[i]})
        z_best, rr_best = (float(res.x), float(-res.fun)) if -res.fun >= rr[i] else (zs[i], rr[i])
        maxima.append((float(z_best), float(rr_best)))
    candidates = list(maxima)
    ends = [(float(zs[j]), float(rr[j])) for j in (0, len(zs) - 1) if np.isfinite(rr[j])]
    best = max(candidates + ends, key=lambda p: p[1])
    return OptimumResult(best[0], best[1], tuple(maxima), best not in maxima)


@dataclass(frozen=True, eq=False)
class SurfaceResult:
    a1: np.ndarray
    t1: np.ndarray
    z_star: np.ndarray
    rr_star: np.ndarray
    n_local_maxima: np.ndarray
    errors: dict

    def rows(self):
        for i, a in enumerate(self.a1):
            for j, t in enumerate(self.t1):
                yield (float(a), float(t), float(self.z_star[i, j]), float(self.rr_star[i, j]),
                       int(self.n_local_maxima[i, j]))


def threshold_surface(a1_grid: Sequence[float], t1_grid: Sequence[float], cfg: RewardConfig,
                      a2: float = 0.5, sigma: float = 0.1, x0: float = 0.0) -> SurfaceResult:
    """Optimal threshold for every ``(a1, t1)`` cell of a two-stage model.

    A failing cell is recorded in ``errors`` (keyed by index) and left as
    ``nan`` rather than aborting the sweep.
    """
    a1 = np.asarray(a1_grid, dtype=float)
    t1 = np.asarray(t1_grid, dtype=float)
    if a1.size == 0 or t1.size == 0:
        raise DomainError("surface grids must be nonempty")
    shape = (a1.size, t1.size)
    z_star = np.full(shape, np.nan)
    rr_star = np.full(shape, np.nan)
    n_max = np.zeros(shape, dtype=int)
    errors = {}
    for i, a in enumerate(a1):
        for j, t in enumerate(t1):
            try:
                opt = optimize_threshold(two_stage_spec(a, a2, sigma, t, x0), cfg)
            except (DomainError, ArithmeticError, RuntimeError) as exc:
                errors[(i, j)] = str(exc)
                continue
            z_star[i, j] = opt.z_star
            rr_star[i, j] = opt.rr_star
            n_max[i, j] = len(opt.local_maxima)
    return SurfaceResult(a1, t1, z_star, rr_star, n_max, errors)
