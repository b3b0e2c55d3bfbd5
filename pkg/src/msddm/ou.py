"""Multistage Ornstein-Uhlenbeck first passage via piecewise Wiener problems.

Within a stage ``dx = (a - lam x) dt + sigma dW``.  With the time change
``u(t) = sigma^2 (exp(2 lam t) - 1) / (2 lam)`` the process
``Y = exp(lam t) (x - a/lam) + a/lam`` is a standard Wiener process in ``u``
that starts at ``x`` and must stay between curved thresholds.  Each stage is
split into pieces of equal original-time length; inside a piece the curves are
replaced by constant thresholds sampled at the piece midpoint, and the result is
chained through the segment cascade of :mod:`msddm.aggregate`.

Every piece restarts the time change at its own start, so ``u`` never grows
beyond one piece and long horizons cannot overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregate import AffineClock, ExponentialTail, FptResult, Segment, build_result, run_segments
from .core import Boundary, DomainError, StageTheta
from .stages import DEFAULT_GRID

__all__ = [
    "DEFAULT_PIECES",
    "OUModel",
    "OUStage",
    "discretize_thresholds",
    "ou_from_ddm",
    "ou_fpt_distribution",
    "ou_threshold_curve",
    "ou_time_inverse",
    "ou_time_transform",
    "with_leak",
]

DEFAULT_PIECES = 32
TAIL_SURVIVAL = 1e-8
QS_TOL = 1e-10
_MAX_EXTENSION_PIECES = 50_000


@dataclass(frozen=True)
class OUStage:
    drift: float
    leak: float
    diffusion: float
    upper_threshold: float
    lower_threshold: float | None = None
    start_time: float = 0.0

    def __post_init__(self):
        if self.lower_threshold is None:
            object.__setattr__(self, "lower_threshold", -self.upper_threshold)
        for name in ("drift", "leak", "diffusion", "upper_threshold", "lower_threshold", "start_time"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if not self.diffusion > 0:
            raise DomainError("diffusion must be positive")
        if self.leak < 0:
            raise DomainError("leak must be nonnegative")
        if not self.lower_threshold < self.upper_threshold:
            raise DomainError("lower threshold must be below upper threshold")

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.lower_threshold, self.upper_threshold)

    @property
    def center(self) -> float:
        return 0.5 * (self.lower_threshold + self.upper_threshold)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper_threshold - self.lower_threshold)


@dataclass(frozen=True)
class OUModel:
    x0: float
    stages: tuple[OUStage, ...]

    def __post_init__(self):
        stages = tuple(self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise DomainError("model needs at least one stage")
        if stages[0].start_time < 0:
            raise DomainError("first stage start time must be >= 0")
        for i in range(1, len(stages)):
            if not stages[i].start_time > stages[i - 1].start_time:
                raise DomainError(f"stage start times must be strictly increasing (stage {i})")
        lo, hi = stages[0].bounds
        if not lo < self.x0 < hi:
            raise DomainError(f"x0={self.x0} must lie strictly inside ({lo}, {hi})")


def _u_of(dt, lam, sig):
    dt = np.asarray(dt, dtype=float)
    if lam == 0.0:
        return sig**2 * dt
    return sig**2 * np.expm1(2.0 * lam * dt) / (2.0 * lam)


def _dt_of(u, lam, sig):
    u = np.asarray(u, dtype=float)
    if lam == 0.0:
        return u / sig**2
    return np.log1p(2.0 * lam * u / sig**2) / (2.0 * lam)


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def ou_time_transform(t, stage: OUStage):
    """Transformed time ``u`` at global time ``t`` (stage-relative)."""
    dt = np.asarray(t, dtype=float) - stage.start_time
    if np.any(dt < 0):
        raise DomainError("time precedes the stage start")
    return _out(_u_of(dt, stage.leak, stage.diffusion))


def ou_time_inverse(u, stage: OUStage):
    """Global time at which the stage's transformed time equals ``u``."""
    if np.any(np.asarray(u) < 0):
        raise DomainError("transformed time must be nonnegative")
    return _out(stage.start_time + _dt_of(u, stage.leak, stage.diffusion))


def _ratio(u, lam, sig):
    return np.sqrt(1.0 + 2.0 * lam * np.asarray(u, dtype=float) / sig**2)


def _curve(level, u, stage: OUStage):
    # (level - a/lam) r + a/lam, rewritten so lam -> 0 stays finite
    r = _ratio(u, stage.leak, stage.diffusion)
    return level * r - 2.0 * stage.drift * u / (stage.diffusion**2 * (r + 1.0))


def ou_threshold_curve(u, stage: OUStage, b: Boundary):
    """Threshold seen by the Wiener process ``Y`` at transformed time ``u``."""
    level = stage.upper_threshold if b is Boundary.UPPER else stage.lower_threshold
    return _out(_curve(level, np.asarray(u, dtype=float), stage))


def discretize_thresholds(stage: OUStage, u_end: float, pieces: int):
    """Piecewise-constant thresholds on ``[0, u_end]``.

    Pieces have equal length in original time; each takes the curve values at
    its original-time midpoint.  Returns ``[(u_lo, u_hi, lower, upper), ...]``.
    """
    if pieces < 1:
        raise DomainError("pieces must be >= 1")
    lam, sig = stage.leak, stage.diffusion
    t_end = float(_dt_of(u_end, lam, sig))
    edges = np.linspace(0.0, t_end, pieces + 1)
    u_edges = _u_of(edges, lam, sig)
    u_edges[-1] = u_end
    u_mid = _u_of(0.5 * (edges[:-1] + edges[1:]), lam, sig)
    lo = _curve(stage.lower_threshold, u_mid, stage)
    hi = _curve(stage.upper_threshold, u_mid, stage)
    return [(float(u_edges[k]), float(u_edges[k + 1]), float(lo[k]), float(hi[k])) for k in range(pieces)]


@dataclass(frozen=True)
class _PieceClock:
    """Transformed time of one piece, measured from its global start ``t0``."""

    t0: float
    lam: float
    sig: float
    affine: bool = False

    def local(self, t):
        return _u_of(np.asarray(t, dtype=float) - self.t0, self.lam, self.sig)

    def rate(self, t):
        return self.sig**2 * np.exp(2.0 * self.lam * (np.asarray(t, dtype=float) - self.t0))

    def to_global(self, local):
        return self.t0 + _dt_of(local, self.lam, self.sig)


def _clock(t0, stage: OUStage):
    if stage.leak == 0.0:
        return AffineClock(t0, stage.diffusion**2)
    return _PieceClock(t0, stage.leak, stage.diffusion)


def _piece(stage: OUStage, t0: float, width: float, comoving: bool) -> Segment:
    """One piece starting at global ``t0`` lasting ``width`` (``inf`` for the tail)."""
    lam, sig, a = stage.leak, stage.diffusion, stage.drift
    c, w = stage.center, stage.half_width
    if math.isfinite(width):
        u_mid = float(_u_of(0.5 * width, lam, sig))
        du = float(_u_of(width, lam, sig))
    else:
        u_mid = 0.0
        du = math.inf
    r_mid = float(_ratio(u_mid, lam, sig))
    center_mid = float(_curve(c, u_mid, stage))
    if comoving:
        # slope of the threshold centre at the midpoint; following it turns the
        # leak-free case into an exact constant-threshold problem
        beta = (c * lam - a) / (sig**2 * r_mid)
        center = center_mid - beta * u_mid
    else:
        beta = 0.0
        center = center_mid
    half = w * r_mid
    theta = StageTheta(-beta, 1.0, center + half, center - half)
    if math.isfinite(du):
        r_end = float(_ratio(du, lam, sig))
        shift = 2.0 * a * du / (sig**2 * (r_end + 1.0) * r_end)
        scale = 1.0 / r_end
        offset = beta * du / r_end + shift
    else:
        scale, offset = 1.0, 0.0
    return Segment(theta, du, t0, t0 + width, _clock(t0, stage), scale, offset)


def _time_scale(stage: OUStage) -> float:
    """Span divided into ``pieces`` pieces in the unbounded last stage.

    The diffusion time across the thresholds, shortened to a quarter of the
    leak time constant when the leak is strong.
    """
    span = 8.0 * stage.half_width**2 / stage.diffusion**2
    if stage.leak > 0:
        span = min(span, 0.25 / stage.leak)
    return span


def _piece_count(stage: OUStage, duration: float, pieces: int) -> int:
    # strong leaks over long stages get proportionally more pieces
    return pieces * max(1, math.ceil(4.0 * stage.leak * duration))


def _batch_summary(records, n: int):
    """Survival factor and upper-exit share over the last ``n`` records."""
    batch = records[-n:]
    entering = batch[0].alive
    if entering <= 0.0:
        return None
    rho = 1.0
    up = dec = 0.0
    for r in batch:
        rho *= r.metrics.survival
        up += r.alive * r.metrics.p_upper
        dec += r.alive * r.metrics.p_decide
    return rho, (up / dec if dec > 0 else math.nan)


def ou_segments(model: OUModel, pieces_per_stage: int, comoving: bool = True):
    """Finite pieces for every stage plus an extender for the unbounded last stage.

    The last stage is time-homogeneous, so identical batches of pieces act
    as one fixed linear map on the surviving density.  Once two consecutive
    batches lose the same fraction of mass with the same boundary split, the
    density is quasi-stationary and the rest is closed with an exponential
    tail.  Without a leak the last piece is instead an exact unbounded
    Wiener stage.
    """
    if pieces_per_stage < 1:
        raise DomainError("pieces_per_stage must be >= 1")
    segs: list[Segment] = []
    stages = model.stages
    for i, st in enumerate(stages[:-1]):
        span = stages[i + 1].start_time - st.start_time
        n = _piece_count(st, span, pieces_per_stage)
        edges = st.start_time + span * np.arange(n + 1) / n
        edges[-1] = stages[i + 1].start_time
        segs.extend(_piece(st, float(edges[k]), float(edges[k + 1] - edges[k]), comoving)
                    for k in range(n))
    last = stages[-1]
    batch_span = _time_scale(last)
    width = batch_span / pieces_per_stage
    budget = [_MAX_EXTENSION_PIECES]

    def batch(t0: float):
        return [_piece(last, t0 + k * width, width, comoving) for k in range(pieces_per_stage)]

    segs.extend(batch(last.start_time))

    def extend(alive: float, records):
        t_end = records[-1].segment.t_end
        if last.leak == 0.0:
            if alive > TAIL_SURVIVAL and budget[0] > 0:
                budget[0] -= pieces_per_stage
                return batch(t_end)
            return [_piece(last, t_end, math.inf, comoving)]
        n = pieces_per_stage
        in_last = sum(1 for r in records if r.segment.t_start >= last.start_time)
        cur = _batch_summary(records, n) if alive > 0 else None
        prev = _batch_summary(records[:-n], n) if in_last >= 2 * n and cur else None
        settled = (prev is not None and abs(cur[0] - prev[0]) <= QS_TOL
                   and abs(cur[1] - prev[1]) <= QS_TOL)
        done = settled or alive <= TAIL_SURVIVAL or budget[0] <= 0
        if done and cur is not None and 0.0 < cur[0] < 1.0 and math.isfinite(cur[1]):
            return [ExponentialTail(t_end, -math.log(cur[0]) / batch_span, cur[1])]
        if alive == 0.0 or (done and budget[0] <= 0):
            return [_piece(last, t_end, math.inf, comoving)]
        budget[0] -= n
        return batch(t_end)

    return segs, extend


def ou_fpt_distribution(model: OUModel, pieces_per_stage: int = DEFAULT_PIECES,
                        grid_size: int = DEFAULT_GRID, time_grid=None,
                        comoving: bool = True) -> FptResult:
    """Approximate first-passage statistics of a multistage OU process.

    ``per_stage`` of the result lists the individual pieces.  With
    ``comoving=False`` the pieces use the plain midpoint thresholds of
    :func:`discretize_thresholds` instead of following the threshold centre.
    """
    segs, extend = ou_segments(model, pieces_per_stage, comoving)
    c = run_segments(model.x0, segs, grid_size, extend=extend)
    starts = [s.start_time for s in model.stages[1:]]
    return build_result(c, time_grid, model.stages[0].start_time, extra_times=starts)


def ou_from_ddm(spec) -> OUModel:
    """Leak-free OU model equivalent to a multistage DDM."""
    return OUModel(spec.x0, tuple(
        OUStage(s.drift, 0.0, s.diffusion, s.upper_threshold, s.lower_threshold, s.start_time)
        for s in spec.stages))


def with_leak(model: OUModel, leak: float | Sequence[float]) -> OUModel:
    leaks = [leak] * len(model.stages) if np.ndim(leak) == 0 else list(leak)
    return OUModel(model.x0, tuple(
        OUStage(s.drift, float(l), s.diffusion, s.upper_threshold, s.lower_threshold, s.start_time)
        for s, l in zip(model.stages, leaks)))
