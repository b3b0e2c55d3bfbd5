"""Whole-process first-passage statistics for multistage models.

Any model handled here is a cascade of *segments*: constant-parameter
diffusions on fixed thresholds, each with its own local clock.  For a plain
multistage DDM every stage is one segment on the global clock; the OU
approximation maps many segments onto a nonlinear clock.  Between segments the
surviving density may be moved by an affine change of coordinates and then cut
to the next segment's thresholds.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .core import Boundary, DomainError, StageTheta, error_rate, fpt_cdf, mean_decision_time
from .stages import (
    DEFAULT_GRID,
    ConditionedDensity,
    StageMetrics,
    apply_threshold_change,
    make_grid,
    propagate_stage,
    stage_cdf,
    stage_fpt_density,
    stage_joint_fpt_density,
    stage_metrics,
)

__all__ = [
    "AffineClock",
    "Atom",
    "ExponentialTail",
    "FptResult",
    "ModelSpec",
    "Segment",
    "analyze",
    "run_segments",
    "summarize",
    "two_stage_closed_form",
]

CDF_TARGET = 1.0 - 1e-4
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class ModelSpec:
    """Initial evidence plus an ordered list of stages (last one unbounded)."""

    x0: float
    stages: tuple[StageTheta, ...]

    def __post_init__(self):
        stages = tuple(self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise DomainError("model needs at least one stage")
        starts = [s.start_time for s in stages]
        if starts[0] < 0:
            raise DomainError("first stage start time must be >= 0")
        for i in range(1, len(starts)):
            if not starts[i] > starts[i - 1]:
                raise DomainError(
                    f"stage start times must be strictly increasing (stage {i}: "
                    f"{starts[i]} <= {starts[i - 1]})"
                )
        lo, hi = stages[0].bounds
        if not lo < self.x0 < hi:
            raise DomainError(f"x0={self.x0} must lie strictly inside ({lo}, {hi})")

    @classmethod
    def from_arrays(cls, x0, drifts, diffusions, start_times, thresholds):
        """``thresholds`` is a scalar, a per-stage list of half-widths, or a list of (lower, upper)."""
        n = len(drifts)
        if np.ndim(thresholds) == 0:
            thresholds = [float(thresholds)] * n
        stages = []
        for a, sig, t, z in zip(drifts, diffusions, start_times, thresholds):
            if np.ndim(z) == 0:
                stages.append(StageTheta(float(a), float(sig), float(z), start_time=float(t)))
            else:
                stages.append(StageTheta(float(a), float(sig), float(z[1]), float(z[0]),
                                         start_time=float(t)))
        if not len(stages) == n == len(diffusions) == len(start_times):
            raise DomainError("drifts, diffusions, start_times and thresholds must have equal length")
        return cls(float(x0), tuple(stages))

    @property
    def start_times(self) -> np.ndarray:
        return np.array([s.start_time for s in self.stages])


class Clock(Protocol):
    affine: bool

    def local(self, t): ...

    def rate(self, t): ...

    def to_global(self, local): ...


@dataclass(frozen=True)
class AffineClock:
    """``local = rate * (t - t0)``."""

    t0: float
    scale: float = 1.0
    affine: bool = True

    def local(self, t):
        return (np.asarray(t, dtype=float) - self.t0) * self.scale

    def rate(self, t):
        return np.full(np.shape(t), self.scale)

    def to_global(self, local):
        return self.t0 + np.asarray(local, dtype=float) / self.scale


@dataclass(frozen=True)
class Segment:
    """A constant-parameter diffusion over ``(t_start, t_end]`` in global time.

    ``theta`` is expressed in local coordinates with ``start_time = 0``.  At
    the end of the segment the surviving evidence ``Y`` is mapped to
    ``exit_scale * Y + exit_offset`` before entering the next segment.
    """

    theta: StageTheta
    duration: float
    t_start: float
    t_end: float
    clock: Clock
    exit_scale: float = 1.0
    exit_offset: float = 0.0


@dataclass(frozen=True)
class ExponentialTail:
    """Closing segment: the remaining mass exits at ``t_start + Exp(rate)``.

    Exits go to the upper boundary with probability ``upper_share``
    regardless of the exit time.  This is exact once a time-homogeneous
    process has settled into its quasi-stationary distribution.
    """

    t_start: float
    rate: float
    upper_share: float

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise DomainError("tail rate must be positive and finite")
        if not 0.0 <= self.upper_share <= 1.0:
            raise DomainError("upper_share must lie in [0, 1]")

    duration = math.inf
    t_end = math.inf

    def metrics(self) -> StageMetrics:
        mean = self.t_start + 1.0 / self.rate
        q = self.upper_share
        return StageMetrics(self.t_start, math.inf, 1.0 - q, 1.0, mean, mean, mean, q * mean, (1.0 - q) * mean)

    def exited(self, t):
        """Fraction of the entering mass decided by global time ``t``."""
        return -np.expm1(-self.rate * np.maximum(np.asarray(t, dtype=float) - self.t_start, 0.0))

    def rate_at(self, t):
        return self.rate * np.exp(-self.rate * (np.asarray(t, dtype=float) - self.t_start))


@dataclass(frozen=True)
class Atom:
    """Probability absorbed instantly at ``time`` by a threshold collapse."""

    time: float
    mass: float
    boundary: Boundary


@dataclass(frozen=True)
class _Record:
    segment: Segment
    alive: float  # probability of entering the segment's dynamics undecided
    density: ConditionedDensity | None
    metrics: StageMetrics


@dataclass(frozen=True, eq=False)
class FptResult:
    """Whole-process first-passage summary.

    ``cdf`` and the joint CDFs are right-continuous, so each sample already
    includes any atom located at or before its time.
    """

    overall_er: float
    overall_mdt: float
    cond_mdt_upper: float
    cond_mdt_lower: float
    times: np.ndarray
    cdf: np.ndarray
    joint_cdf_upper: np.ndarray
    joint_cdf_lower: np.ndarray
    atoms: tuple[Atom, ...]
    per_stage: tuple[StageMetrics, ...]
    _cascade: "_Cascade" = field(repr=False)

    @property
    def p_upper(self) -> float:
        return 1.0 - self.overall_er

    @property
    def p_lower(self) -> float:
        return self.overall_er

    @property
    def cond_cdf_upper(self) -> np.ndarray:
        return _safe_div(self.joint_cdf_upper, self._cascade.p_upper)

    @property
    def cond_cdf_lower(self) -> np.ndarray:
        return _safe_div(self.joint_cdf_lower, self._cascade.p_lower)

    def cdf_at(self, t, b: Boundary | None = None):
        return self._cascade.cdf(np.asarray(t, dtype=float), b)

    def cdf_left(self, t, b: Boundary | None = None, conditional: bool = False, tol: float = 1e-9):
        """Left limit of the CDF: atoms within ``tol`` of ``t`` are removed.

        With ``conditional`` the joint CDF for ``b`` is divided by ``P(b)``.
        """
        t = np.asarray(t, dtype=float)
        out = self._cascade.cdf(t, b)
        for a in self.atoms:
            if b is None or a.boundary is b:
                near = np.abs(t - a.time) <= tol * max(1.0, abs(a.time))
                out = out - np.where(near, a.mass, 0.0)
        if conditional and b is not None:
            out = _safe_div(out, self._cascade.p_upper if b is Boundary.UPPER else self._cascade.p_lower)
        return out

    def density(self, t, b: Boundary | None = None):
        """Continuous part of the first-passage density (atoms excluded)."""
        return self._cascade.density(np.asarray(t, dtype=float), b)


def _safe_div(num, den):
    if den > 0:
        return num / den
    return np.full(np.shape(num), np.nan)


class _Cascade:
    def __init__(self, records: list[_Record], atoms: list[Atom]):
        self.records = records
        self.atoms = atoms
        self.starts = np.array([r.segment.t_start for r in records])
        before = np.zeros((len(records), 2))
        acc = np.zeros(2)
        for k, r in enumerate(records):
            before[k] = acc
            m = r.metrics
            acc = acc + r.alive * np.array([m.p_upper, m.p_lower])
            acc = acc + r.alive * np.array([m.atom_upper, m.atom_lower])
        self.before = before  # decided mass (upper, lower) before each segment's dynamics
        self.p_upper, self.p_lower = float(acc[0]), float(acc[1])

    def _locate(self, t):
        return np.searchsorted(self.starts, t, side="right") - 1

    def joint_cdfs(self, t):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        up = np.zeros(flat.shape)
        lo = np.zeros(flat.shape)
        seg_idx = self._locate(flat)
        for k in np.unique(seg_idx):
            if k < 0:
                continue
            sel = seg_idx == k
            r = self.records[k]
            up[sel], lo[sel] = self.before[k]
            if isinstance(r.segment, ExponentialTail):
                gone = r.alive * r.segment.exited(flat[sel])
                up[sel] += r.segment.upper_share * gone
                lo[sel] += (1.0 - r.segment.upper_share) * gone
                continue
            if r.density is None or r.alive == 0.0:
                continue
            loc = r.segment.clock.local(flat[sel])
            theta = r.segment.theta
            up[sel] += r.alive * stage_cdf(loc, r.density, theta, Boundary.UPPER)
            lo[sel] += r.alive * stage_cdf(loc, r.density, theta, Boundary.LOWER)
        return up.reshape(t.shape), lo.reshape(t.shape)

    def cdf(self, t, b=None):
        up, lo = self.joint_cdfs(t)
        if b is None:
            return up + lo
        return up if b is Boundary.UPPER else lo

    def density(self, t, b=None):
        flat = t.ravel()
        out = np.zeros(flat.shape)
        seg_idx = self._locate(flat)
        for k in np.unique(seg_idx):
            if k < 0:
                continue
            r = self.records[k]
            sel = (seg_idx == k) & (flat > r.segment.t_start)
            if isinstance(r.segment, ExponentialTail):
                share = {None: 1.0, Boundary.UPPER: r.segment.upper_share,
                         Boundary.LOWER: 1.0 - r.segment.upper_share}[b]
                out[sel] = r.alive * share * r.segment.rate_at(flat[sel])
                continue
            if r.density is None or r.alive == 0.0 or not np.any(sel):
                continue
            loc = r.segment.clock.local(flat[sel])
            jac = r.segment.clock.rate(flat[sel])
            if b is None:
                f = stage_fpt_density(loc, r.density, r.segment.theta)
            else:
                f = stage_joint_fpt_density(loc, r.density, r.segment.theta, b)
            out[sel] = r.alive * f * jac
        return out.reshape(t.shape)


def _hat_by_quadrature(seg: Segment, density: ConditionedDensity, p_b: float, b: Boundary) -> float:
    """``E[tau 1(exit at b in segment)]`` for a nonlinear clock, given entry."""
    if p_b == 0.0:
        return 0.0
    width = seg.t_end - seg.t_start
    shape = replace(seg.clock, t0=0.0)
    if density.is_point_mass:
        g = _relative_hat(seg.theta, width, shape, b, density.grid)
    else:
        g = _relative_hat_on_grid(seg.theta, width, shape, b,
                                  density.lower, density.upper, len(density.grid))
    return seg.t_start * p_b + float(density.weights @ g)


def _relative_hat(theta, width, clock, b, nodes):
    # E_x[(tau - t_start) 1(exit at b, tau <= t_end)] = width F(end) - int F
    half = 0.5 * width
    s = half * (_GL_NODES + 1.0)
    loc = np.concatenate([clock.local(s), [float(clock.local(width))]])
    F = fpt_cdf(loc[:, None], nodes[None, :], theta, b)
    return width * F[-1] - half * (_GL_WEIGHTS @ F[:-1])


@functools.lru_cache(maxsize=32)
def _relative_hat_on_grid(theta, width, clock, b, lower, upper, n):
    nodes, _ = make_grid(lower, upper, n)
    g = _relative_hat(theta, width, clock, b, nodes)
    g.setflags(write=False)
    return g


def _globalize(seg: Segment, density, m: StageMetrics) -> StageMetrics:
    """Convert metrics computed on the local clock to global time."""
    if m.p_decide == 0.0:
        return replace(m, t_start=seg.t_start, t_end=seg.t_end)
    if seg.clock.affine:
        sc = seg.clock.scale
        t0 = seg.t_start
        hat_up = t0 * m.p_upper + m.hat_mdt_upper / sc
        hat_lo = t0 * m.p_lower + m.hat_mdt_lower / sc
        mdt = t0 + m.mdt_i / sc
    else:
        if math.isfinite(seg.t_end):
            hat_up = _hat_by_quadrature(seg, density, m.p_upper, Boundary.UPPER)
            hat_lo = _hat_by_quadrature(seg, density, m.p_lower, Boundary.LOWER)
        else:
            hat_up = _tail_hat(seg, m.hat_mdt_upper, m.p_upper)
            hat_lo = _tail_hat(seg, m.hat_mdt_lower, m.p_lower)
        mdt = (hat_up + hat_lo) / m.p_decide
    cu = hat_up / m.p_upper if m.p_upper > 0 else math.nan
    cl = hat_lo / m.p_lower if m.p_lower > 0 else math.nan
    return replace(m, t_start=seg.t_start, t_end=seg.t_end, mdt_i=mdt,
                   cond_mdt_upper=cu, cond_mdt_lower=cl,
                   hat_mdt_upper=hat_up, hat_mdt_lower=hat_lo)


def _tail_hat(seg: Segment, hat_local: float, p_b: float) -> float:
    if p_b == 0.0:
        return 0.0
    return p_b * float(seg.clock.to_global(hat_local / p_b))


def run_segments(x0: float, segments: Sequence, grid_size: int = DEFAULT_GRID,
                 extend=None) -> _Cascade:
    """Propagate a point mass at ``x0`` through ``segments``.

    If the last segment is finite, ``extend(alive, records)`` is asked for
    more segments until an unbounded one (a :class:`Segment` of infinite
    duration or an :class:`ExponentialTail`) has been processed.  ``records``
    lists, per processed segment, the segment, the mass entering it and its
    metrics.
    """
    segments = list(segments)
    first = segments[0].theta
    density: ConditionedDensity | None = ConditionedDensity.point_mass(x0, *first.bounds)
    log_alive = 0.0
    records: list[_Record] = []
    atoms: list[Atom] = []
    prev_seg: Segment | None = None
    k = -1
    while True:
        k += 1
        if k == len(segments):
            if extend is None or not math.isfinite(segments[-1].duration):
                break
            alive_now = math.exp(log_alive) if density is not None else 0.0
            segments.extend(extend(alive_now, records))
        seg = segments[k]
        if isinstance(seg, ExponentialTail):
            alive = math.exp(log_alive) if density is not None else 0.0
            m = seg.metrics() if alive > 0 else replace(seg.metrics(), p_decide=0.0)
            records.append(_Record(seg, alive, None, m))
            density = None
            prev_seg = seg
            continue
        if k > 0 and density is not None:
            density = density.affine(prev_seg.exit_scale, prev_seg.exit_offset)
            density, au, al = apply_threshold_change(
                density, (density.lower, density.upper), seg.theta.bounds, grid_size)
            if au or al:
                prev = records[-1]
                S_prev = 1.0 - prev.metrics.p_decide
                records[-1] = replace(prev, metrics=replace(
                    prev.metrics, atom_upper=S_prev * au, atom_lower=S_prev * al))
                alive = math.exp(log_alive)
                for mass, b in ((au, Boundary.UPPER), (al, Boundary.LOWER)):
                    if mass > 0:
                        atoms.append(Atom(seg.t_start, alive * mass, b))
                log_alive += math.log1p(-(au + al))
        alive = math.exp(log_alive) if density is not None else 0.0
        if density is None or alive == 0.0:
            nan = math.nan
            m = StageMetrics(seg.t_start, seg.t_end, nan, 0.0, nan, nan, nan, 0.0, 0.0)
            records.append(_Record(seg, 0.0, None, m))
            density = None
            prev_seg = seg
            continue
        if math.isfinite(seg.duration):
            out, S = propagate_stage(density, seg.theta, seg.duration, grid_size)
        else:
            out, S = None, 0.0
        m = stage_metrics(density, out, S, seg.theta, 0.0, seg.duration)
        m = _globalize(seg, density, m)
        records.append(_Record(seg, alive, density, m))
        log_alive = log_alive + math.log(S) if S > 0 else -math.inf
        density = out
        prev_seg = seg
    return _Cascade(records, atoms)


def _ddm_segments(spec: ModelSpec) -> list[Segment]:
    segs = []
    n = len(spec.stages)
    for i, st in enumerate(spec.stages):
        t_end = spec.stages[i + 1].start_time if i + 1 < n else math.inf
        segs.append(Segment(replace(st, start_time=0.0), t_end - st.start_time,
                            st.start_time, t_end, AffineClock(st.start_time)))
    return segs


def _aggregate_scalars(c: _Cascade):
    er = 0.0
    mdt = 0.0
    hat_up = 0.0
    hat_lo = 0.0
    for r in c.records:
        m = r.metrics
        if r.alive == 0.0:
            continue
        er += r.alive * (m.p_lower + m.atom_lower)
        if m.p_decide > 0:
            mdt += r.alive * m.p_decide * m.mdt_i
            hat_up += r.alive * m.hat_mdt_upper
            hat_lo += r.alive * m.hat_mdt_lower
        atom_t = r.segment.t_end
        if m.atom_upper or m.atom_lower:
            mdt += r.alive * (m.atom_upper + m.atom_lower) * atom_t
            hat_up += r.alive * m.atom_upper * atom_t
            hat_lo += r.alive * m.atom_lower * atom_t
    cu = hat_up / c.p_upper if c.p_upper > 0 else math.nan
    cl = hat_lo / c.p_lower if c.p_lower > 0 else math.nan
    return er, mdt, cu, cl


def default_time_grid(c: _Cascade, t0: float, n: int = 512, extra=()) -> np.ndarray:
    """Log-spaced times from ``t0 + 1e-3`` until the CDF reaches ``1 - 1e-4``."""
    finite_ends = [r.segment.t_start for r in c.records]
    span = max(max(finite_ends) - t0, 0.0) + 1.0
    for _ in range(80):
        if c.cdf(np.array([t0 + span]))[0] >= CDF_TARGET:
            break
        span *= 2.0
    grid = t0 + np.geomspace(1e-3, max(span, 2e-3), n)
    pts = [p for p in extra if t0 < p < grid[-1]]
    return np.unique(np.concatenate([grid, pts]))


def build_result(c: _Cascade, time_grid, t0: float, want_cdf: bool = True, extra_times=()) -> FptResult:
    er, mdt, cu, cl = _aggregate_scalars(c)
    if want_cdf:
        if time_grid is None:
            times = default_time_grid(c, t0, extra=extra_times)
        else:
            times = np.asarray(time_grid, dtype=float)
            if times.ndim != 1 or times.size == 0:
                raise DomainError("time_grid must be a nonempty 1-d sequence")
            if np.any(np.diff(times) <= 0) or times[0] <= 0:
                raise DomainError("time_grid must be positive and strictly increasing")
        up, lo = c.joint_cdfs(times)
        up = np.clip(up, 0.0, 1.0)
        lo = np.clip(lo, 0.0, 1.0)
    else:
        times = up = lo = np.zeros(0)
    return FptResult(er, mdt, cu, cl, times, np.clip(up + lo, 0.0, 1.0), up, lo,
                     tuple(c.atoms), tuple(r.metrics for r in c.records), c)


def analyze(spec: ModelSpec, grid_size: int = DEFAULT_GRID, time_grid=None) -> FptResult:
    """First-passage statistics of a multistage DDM.

    ``time_grid=None`` picks 512 log-spaced times (plus stage start times)
    covering the CDF up to ``1 - 1e-4``.
    """
    c = run_segments(spec.x0, _ddm_segments(spec), grid_size)
    t0 = spec.stages[0].start_time
    return build_result(c, time_grid, t0, extra_times=spec.start_times[1:])


def summarize(spec: ModelSpec, grid_size: int = DEFAULT_GRID) -> FptResult:
    """Scalar metrics only (no CDF samples); cheaper for optimization loops."""
    c = run_segments(spec.x0, _ddm_segments(spec), grid_size)
    return build_result(c, None, spec.stages[0].start_time, want_cdf=False)


def two_stage_closed_form(x0: float, theta1: StageTheta, theta2: StageTheta, t1: float,
                          grid_size: int = DEFAULT_GRID) -> tuple[float, float]:
    """Error rate and mean decision time of a two-stage DDM from direct formulas.

    Both stages must share symmetric thresholds ``(-z, z)``; ``t1`` is the
    duration of stage one (which starts at time 0).  Only the evidence
    distribution at ``t1`` is computed numerically.
    """
    if not t1 > 0:
        raise DomainError("t1 must be positive")
    if theta1.bounds != theta2.bounds or theta1.center != 0.0:
        raise DomainError("two-stage closed form needs identical symmetric thresholds")
    z = theta1.upper_threshold
    if not -z < x0 < z:
        raise DomainError("x0 must lie inside the thresholds")
    if not math.isfinite(t1):
        er = error_rate(x0, replace(theta1, start_time=0.0))
        return er, mean_decision_time(x0, replace(theta1, start_time=0.0))
    th1 = replace(theta1, start_time=0.0)
    d0 = ConditionedDensity.point_mass(x0, -z, z)
    d1, S = propagate_stage(d0, th1, t1, grid_size)
    p = 1.0 - S
    ex1 = d1.expect(lambda x: x) if d1 is not None else 0.0
    ex1sq = d1.expect(lambda x: x * x) if d1 is not None else 0.0

    def er_and_time(theta, start_moment, start_sq, start_exp, p_dec, surv, end_exp, end_mean, end_sq):
        a, sig = theta.drift, theta.diffusion
        s = a / sig**2
        if abs(s * z) < 1e-8:
            er = 0.5 - (start_moment - end_mean * surv) / (2 * z * p_dec)
            t = (z * z * p_dec - start_sq + end_sq * surv) / sig**2
        else:
            # p_dec + surv = 1, so subtracting 1 from each exponential is exact and avoids cancellation
            er = (start_exp(s) - end_exp(s) * surv - math.expm1(-2 * s * z) * p_dec) / (
                2.0 * math.sinh(2 * s * z) * p_dec)
            t = ((1 - 2 * er) * z * p_dec - start_moment + end_mean * surv) / a
        return er, t

    def shifted_exp(s):
        # E[exp(-2 s X1)] - 1
        return d1.expect(lambda x: np.expm1(-2 * s * x))

    if p > 0:
        er1, time1 = er_and_time(
            th1, x0, x0 * x0, lambda s: math.expm1(-2 * s * x0), p, S,
            shifted_exp if d1 is not None else (lambda s: 0.0), ex1, ex1sq)
    else:
        er1, time1 = 0.0, t1
    if S > 0:
        er2, time2 = er_and_time(theta2, ex1, ex1sq, shifted_exp, 1.0, 0.0,
                                 lambda s: 0.0, 0.0, 0.0)
    else:
        er2, time2 = 0.0, 0.0
    er = er1 * p + er2 * S
    mdt = time1 + time2 * S
    return er, mdt
