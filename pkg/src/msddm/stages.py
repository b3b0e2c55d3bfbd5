"""Propagation of the surviving evidence distribution through one stage.

A stage starts from ``X_{i-1}``, the evidence at the stage start conditioned on
no decision so far.  Propagating it over the stage duration gives ``X_i`` and
the probability of surviving the stage; the per-stage metrics follow from
optional-stopping identities that only need expectations over ``X_{i-1}`` and
``X_i``.

Densities live on uniform grids strictly inside the thresholds and are
integrated with composite Simpson weights (the density vanishes at both
thresholds, so the endpoints carry no mass).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .core import (
    DRIFT_TOL,
    Boundary,
    DomainError,
    StageTheta,
    _canon,
    _cond_mdt_canon,
    _p_lower,
    _p_upper,
    fpt_cdf,
    fpt_density,
    conditional_fpt_density,
    survival_joint_density,
)

__all__ = [
    "DEFAULT_GRID",
    "ConditionedDensity",
    "ConsistencyError",
    "DegenerateModelError",
    "StageMetrics",
    "apply_threshold_change",
    "exp_moment",
    "make_grid",
    "propagate_stage",
    "stage_cdf",
    "stage_conditional_mean_dt",
    "stage_error_rate",
    "stage_fpt_density",
    "stage_joint_fpt_density",
    "stage_mean_dt",
    "stage_metrics",
]

DEFAULT_GRID = 512
_BOUND_RTOL = 1e-12


class ConsistencyError(RuntimeError):
    """Quadrature produced an impossible probability mass."""


class DegenerateModelError(RuntimeError):
    """A threshold change absorbs all remaining probability."""


@functools.lru_cache(maxsize=64)
def _unit_weights(n_interior: int) -> np.ndarray:
    m = n_interior + 2
    w = simpson(np.eye(m), dx=1.0, axis=-1)
    w = w[1:-1].copy()
    w.setflags(write=False)
    return w


def make_grid(lower: float, upper: float, n: int = DEFAULT_GRID):
    """Interior nodes and Simpson weights for a uniform grid on ``(lower, upper)``."""
    if n < 2:
        raise DomainError("grid_size must be at least 2")
    if not lower < upper:
        raise DomainError("grid requires lower < upper")
    h = (upper - lower) / (n + 1)
    nodes = lower + h * np.arange(1, n + 1)
    return nodes, h * _unit_weights(n)


@dataclass(frozen=True, eq=False)
class ConditionedDensity:
    """Evidence density at a stage boundary, conditioned on survival.

    ``values`` is ``None`` for a point mass at ``grid[0]``.  ``survival_prob``
    is the probability (from process start) of no decision so far.
    """

    grid: np.ndarray
    values: np.ndarray | None
    survival_prob: float
    lower: float
    upper: float

    @classmethod
    def point_mass(cls, x0: float, lower: float, upper: float, survival_prob: float = 1.0):
        if not lower < x0 < upper:
            raise DomainError(f"x0={x0} must lie strictly inside ({lower}, {upper})")
        return cls(np.array([float(x0)]), None, survival_prob, float(lower), float(upper))

    @classmethod
    def from_values(cls, grid, values, lower, upper, survival_prob=1.0):
        """Build from unnormalized values on a uniform interior grid."""
        grid = np.asarray(grid, dtype=float)
        values = np.clip(np.asarray(values, dtype=float), 0.0, None)
        w = _weights_for(grid, lower, upper)
        mass = float(w @ values)
        if not mass > 0:
            raise DomainError("density has no mass")
        return cls(grid, values / mass, survival_prob, float(lower), float(upper))

    @property
    def is_point_mass(self) -> bool:
        return self.values is None

    @functools.cached_property
    def weights(self) -> np.ndarray:
        """Probability mass attached to each node."""
        if self.values is None:
            return np.ones(1)
        return _weights_for(self.grid, self.lower, self.upper) * self.values

    def expect(self, fn: Callable | np.ndarray) -> float:
        vals = fn(self.grid) if callable(fn) else fn
        return float(self.weights @ vals)

    def mass(self) -> float:
        return float(self.weights.sum())

    def affine(self, scale: float, offset: float) -> "ConditionedDensity":
        """Distribution of ``scale * X + offset`` (scale > 0)."""
        lo, hi = scale * self.lower + offset, scale * self.upper + offset
        grid = scale * self.grid + offset
        vals = None if self.values is None else self.values / scale
        return ConditionedDensity(grid, vals, self.survival_prob, lo, hi)


def _weights_for(grid, lower, upper):
    n = len(grid)
    h = (upper - lower) / (n + 1)
    return h * _unit_weights(n)


def _same_bounds(a: tuple[float, float], b: tuple[float, float]) -> bool:
    scale = max(abs(a[1] - a[0]), 1e-300)
    return abs(a[0] - b[0]) <= _BOUND_RTOL * scale and abs(a[1] - b[1]) <= _BOUND_RTOL * scale


def _contains(outer: tuple[float, float], inner: tuple[float, float]) -> bool:
    slack = _BOUND_RTOL * max(abs(outer[1] - outer[0]), 1e-300)
    return inner[0] >= outer[0] - slack and inner[1] <= outer[1] + slack


def _check_support(density: ConditionedDensity, theta: StageTheta):
    if not _contains(theta.bounds, (density.lower, density.upper)):
        raise DomainError(
            f"density support ({density.lower}, {density.upper}) is not inside the stage "
            f"thresholds {theta.bounds}; apply_threshold_change first"
        )


def propagate_stage(density_in: ConditionedDensity, theta: StageTheta, duration: float,
                    grid_size: int = DEFAULT_GRID):
    """Push ``density_in`` through a stage of length ``duration``.

    Returns ``(density_out, stage_survival)``.  ``density_out`` is ``None`` when
    nothing survives (the survival probability underflowed to zero).
    """
    if not duration > 0:
        raise DomainError("stage duration must be positive")
    if not math.isfinite(duration):
        raise DomainError("cannot propagate through a stage without deadline")
    _check_support(density_in, theta)
    nodes, qw = make_grid(theta.lower_threshold, theta.upper_threshold, grid_size)
    if density_in.is_point_mass:
        kernel = survival_joint_density(nodes[:, None], duration, density_in.grid[None, :], theta)
    else:
        kernel = _grid_kernel(theta.drift, theta.diffusion, theta.lower_threshold,
                              theta.upper_threshold, float(duration), grid_size,
                              density_in.lower, density_in.upper, len(density_in.grid))
    unnorm = kernel @ density_in.weights
    mass = float(qw @ unnorm)
    if mass > 1.0 + 1e-6:
        raise ConsistencyError(f"stage survival {mass} exceeds one; grid too coarse")
    mass = min(mass, 1.0)
    if mass <= 0.0:
        return None, 0.0
    out = ConditionedDensity(nodes, unnorm / mass, density_in.survival_prob * mass,
                             theta.lower_threshold, theta.upper_threshold)
    return out, mass


@functools.lru_cache(maxsize=16)
def _grid_kernel(drift, diffusion, lower, upper, duration, n_out, in_lower, in_upper, n_in):
    # repeated identical stages (e.g. long piecewise approximations) reuse this
    theta = StageTheta(drift, diffusion, upper, lower)
    nodes_out, _ = make_grid(lower, upper, n_out)
    nodes_in, _ = make_grid(in_lower, in_upper, n_in)
    nodes_in = np.clip(nodes_in, lower, upper)
    k = survival_joint_density(nodes_out[:, None], duration, nodes_in[None, :], theta)
    k.setflags(write=False)
    return k


def exp_moment(density: ConditionedDensity, s: float) -> float:
    """``E[exp(-2 s X)]``."""
    return density.expect(lambda x: np.exp(-2.0 * s * x))


@dataclass(frozen=True)
class _Oriented:
    """Stage quantities in canonical coordinates (symmetric, drift >= 0)."""

    z: float
    drift: float
    sigma: float
    flipped: bool
    x_in: np.ndarray
    w_in: np.ndarray
    x_out: np.ndarray
    w_out: np.ndarray

    @property
    def s(self):
        return self.drift / self.sigma**2

    @property
    def zero_drift(self):
        return abs(self.s * self.z) < DRIFT_TOL

    def canon_at(self, x):
        from .core import _Canon
        return _Canon(x=x, z=self.z, drift=self.drift, sigma=self.sigma, flipped=self.flipped)

    def e_in(self, vals):
        return float(self.w_in @ vals)

    def e_out(self, vals):
        return 0.0 if self.w_out.size == 0 else float(self.w_out @ vals)


def _orient(density_in, density_out, theta: StageTheta) -> _Oriented:
    c = _canon(density_in.grid, theta, strict=False)
    if density_out is None:
        x_out = np.zeros(0)
        w_out = np.zeros(0)
    else:
        x_out = density_out.grid - theta.center
        if c.flipped:
            x_out = -x_out
        w_out = density_out.weights
    return _Oriented(c.z, c.drift, c.sigma, c.flipped, c.x, density_in.weights, x_out, w_out)


def _canonical_lower_given_decision(o: _Oriented, survival: float) -> float:
    p = 1.0 - survival
    if o.zero_drift:
        return 0.5 - (o.e_in(o.x_in) - o.e_out(o.x_out) * survival) / (2.0 * o.z * p)
    s, z = o.s, o.z
    em4 = math.expm1(-4.0 * s * z)
    num = (o.e_in(np.expm1(-2.0 * s * (o.x_in + z)))
           - survival * o.e_out(np.expm1(-2.0 * s * (o.x_out + z)))
           - em4 * p)
    return num / (-em4 * p)


def stage_error_rate(density_in, density_out, stage_survival, theta: StageTheta) -> float:
    """Probability of a lower-threshold exit given a decision within the stage.

    For a final stage pass ``density_out=None`` and ``stage_survival=0``.
    Returns ``nan`` when no decision can happen in the stage.
    """
    if not 1.0 - stage_survival > 0:
        return math.nan
    o = _orient(density_in, density_out, theta)
    er_c = _canonical_lower_given_decision(o, stage_survival)
    er_c = min(max(er_c, 0.0), 1.0)
    return 1.0 - er_c if o.flipped else er_c


def stage_mean_dt(density_in, density_out, stage_survival, theta: StageTheta,
                  t_start: float, t_end: float) -> float:
    """``E[tau | decision within (t_start, t_end]]`` in absolute time."""
    p = 1.0 - stage_survival
    if not p > 0:
        return math.nan
    o = _orient(density_in, density_out, theta)
    S = stage_survival
    dur_term = 0.0 if S == 0 else (t_end - t_start) * S
    if o.zero_drift:
        num = (o.z**2 * p - o.e_in(o.x_in**2) + S * o.e_out(o.x_out**2)
               - o.sigma**2 * dur_term)
        return t_start + num / (o.sigma**2 * p)
    er_c = _canonical_lower_given_decision(o, S)
    num = ((1.0 - 2.0 * er_c) * o.z * p - o.e_in(o.x_in) + S * o.e_out(o.x_out)
           - o.drift * dur_term)
    return t_start + num / (o.drift * p)


def _stage_hat(o: _Oriented, S, t_start, t_end, upper_canon: bool):
    """(hat_mdt, P(exit at boundary & decision in stage)) in canonical labels."""
    p_fn = _p_upper if upper_canon else _p_lower
    c_in = o.canon_at(o.x_in)
    c_out = o.canon_at(o.x_out)
    p_in = o.e_in(p_fn(c_in))
    hat_in = o.e_in(p_fn(c_in) * _cond_mdt_canon(c_in, upper_canon))
    if S > 0:
        p_out = o.e_out(p_fn(c_out))
        hat_out = o.e_out(p_fn(c_out) * _cond_mdt_canon(c_out, upper_canon))
        later = S * p_out
        hat = t_start * p_in + hat_in - S * hat_out - t_end * later
    else:
        hat = t_start * p_in + hat_in
    return hat


def stage_conditional_mean_dt(density_in, density_out, stage_survival, theta: StageTheta,
                              t_start: float, t_end: float, b: Boundary) -> float:
    """``E[tau | exit at b, decision within the stage]`` in absolute time.

    Returns ``nan`` when that event has probability zero.
    """
    p = 1.0 - stage_survival
    if not p > 0:
        return math.nan
    o = _orient(density_in, density_out, theta)
    upper_canon = (b is Boundary.UPPER) != o.flipped
    er_c = _canonical_lower_given_decision(o, stage_survival)
    denom = (1.0 - er_c) * p if upper_canon else er_c * p
    if not denom > 0:
        return math.nan
    return _stage_hat(o, stage_survival, t_start, t_end, upper_canon) / denom


@dataclass(frozen=True)
class StageMetrics:
    """Per-stage first-passage summary.

    ``er_i``, ``mdt_i`` and the conditional times are conditioned on a decision
    inside the stage; ``p_decide`` and the atoms are conditioned on entering
    it.  The ``hat_*`` fields are ``E[tau 1(exit at b, decision in stage)]``
    given entry.  Atoms are the masses absorbed at ``t_end`` by a threshold
    change into the next stage.
    """

    t_start: float
    t_end: float
    er_i: float
    p_decide: float
    mdt_i: float
    cond_mdt_upper: float
    cond_mdt_lower: float
    hat_mdt_upper: float
    hat_mdt_lower: float
    atom_upper: float = 0.0
    atom_lower: float = 0.0

    @property
    def survival(self) -> float:
        """Probability of leaving the stage undecided (after atoms)."""
        return 1.0 - self.p_decide - self.atom_upper - self.atom_lower

    @property
    def p_upper(self) -> float:
        return (1.0 - self.er_i) * self.p_decide if self.p_decide > 0 else 0.0

    @property
    def p_lower(self) -> float:
        return self.er_i * self.p_decide if self.p_decide > 0 else 0.0


def stage_metrics(density_in, density_out, stage_survival, theta: StageTheta,
                  t_start: float, t_end: float) -> StageMetrics:
    """All per-stage quantities for one stage (no atoms attached yet)."""
    p = 1.0 - stage_survival
    if not p > 0:
        nan = math.nan
        return StageMetrics(t_start, t_end, nan, 0.0, nan, nan, nan, 0.0, 0.0)
    o = _orient(density_in, density_out, theta)
    er_c = _canonical_lower_given_decision(o, stage_survival)
    er_c = min(max(er_c, 0.0), 1.0)
    hat_uc = _stage_hat(o, stage_survival, t_start, t_end, True)
    hat_lc = _stage_hat(o, stage_survival, t_start, t_end, False)
    # equals stage_mean_dt, but stays accurate as the drift goes to zero
    mdt = (hat_uc + hat_lc) / p
    if o.flipped:
        er, hat_up, hat_lo = 1.0 - er_c, hat_lc, hat_uc
    else:
        er, hat_up, hat_lo = er_c, hat_uc, hat_lc
    p_up, p_lo = (1.0 - er) * p, er * p
    cond_up = hat_up / p_up if p_up > 0 else math.nan
    cond_lo = hat_lo / p_lo if p_lo > 0 else math.nan
    return StageMetrics(t_start, t_end, er, p, mdt, cond_up, cond_lo, hat_up, hat_lo)


def _local_time(t, theta: StageTheta):
    tau = np.asarray(t, dtype=float) - theta.start_time
    if np.any(tau <= 0):
        raise DomainError("time must be after the stage start")
    return tau


def stage_fpt_density(t, density_in: ConditionedDensity, theta: StageTheta):
    """First-passage density for decisions in this stage, given entry.

    Independent of the stage deadline.
    """
    tau = _local_time(t, theta)
    f = fpt_density(np.asarray(tau)[..., None], density_in.grid, theta)
    return f @ density_in.weights


def stage_joint_fpt_density(t, density_in: ConditionedDensity, theta: StageTheta, b: Boundary):
    tau = _local_time(t, theta)
    joint, _ = conditional_fpt_density(np.asarray(tau)[..., None], density_in.grid, theta, b)
    return joint @ density_in.weights


def stage_cdf(t, density_in: ConditionedDensity, theta: StageTheta, b: Boundary | None = None):
    """``P(tau_i <= t)`` (optionally jointly with exit at ``b``), given entry."""
    tau = np.asarray(t, dtype=float) - theta.start_time
    F = fpt_cdf(tau[..., None], density_in.grid, theta, b)
    return F @ density_in.weights


def _as_bounds(z) -> tuple[float, float]:
    if np.ndim(z) == 0:
        z = float(z)
        if not z > 0:
            raise DomainError("threshold must be positive")
        return (-z, z)
    lo, hi = (float(v) for v in z)
    if not lo < hi:
        raise DomainError("lower threshold must be below upper threshold")
    return (lo, hi)


def _pl_integral(xs, ys, a, b):
    """Integral of the piecewise-linear interpolant of (xs, ys) over [a, b]."""
    if b <= a:
        return 0.0
    inner = xs[(xs > a) & (xs < b)]
    pts = np.concatenate(([a], inner, [b]))
    vals = np.interp(pts, xs, ys, left=0.0, right=0.0)
    return float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(pts)))


def apply_threshold_change(density_in: ConditionedDensity, z_old, z_new, grid_size: int | None = None):
    """Move the surviving density onto new thresholds.

    ``z_old``/``z_new`` are a half-width (symmetric thresholds) or a
    ``(lower, upper)`` pair.  Mass outside the new interval is absorbed
    instantaneously and the remainder is resampled onto a grid spanning the
    retained support; if nothing is cut the density is returned as is.
    Returns ``(density_out, atom_upper, atom_lower)`` with the atoms
    expressed as fractions of ``density_in``.
    """
    old = _as_bounds(z_old)
    new = _as_bounds(z_new)
    support = (density_in.lower, density_in.upper)
    if not _contains(old, support):
        raise DomainError("density support is not inside z_old")
    if _contains(new, support):
        # nothing is cut; keep the grid inside the new interval
        return density_in, 0.0, 0.0
    lo, hi = new
    if density_in.is_point_mass:
        x0 = float(density_in.grid[0])
        if x0 >= hi or x0 <= lo:
            raise DegenerateModelError("threshold change absorbs the entire point mass")
        return ConditionedDensity.point_mass(x0, lo, hi, density_in.survival_prob), 0.0, 0.0
    xs = np.concatenate(([density_in.lower], density_in.grid, [density_in.upper]))
    ys = np.concatenate(([0.0], density_in.values, [0.0]))
    total = _pl_integral(xs, ys, xs[0], xs[-1])
    atom_up = _pl_integral(xs, ys, max(hi, xs[0]), xs[-1]) / total if hi < xs[-1] else 0.0
    atom_lo = _pl_integral(xs, ys, xs[0], min(lo, xs[-1])) / total if lo > xs[0] else 0.0
    kept = 1.0 - atom_up - atom_lo
    if kept <= 1e-15:
        raise DegenerateModelError("threshold change absorbs all remaining probability")
    lo_kept, hi_kept = max(lo, xs[0]), min(hi, xs[-1])
    n = grid_size or len(density_in.grid)
    nodes, qw = make_grid(lo_kept, hi_kept, n)
    vals = np.interp(nodes, xs, ys, left=0.0, right=0.0)
    mass = float(qw @ vals)
    if not mass > 0:
        raise DegenerateModelError("no density left inside the new thresholds")
    out = ConditionedDensity(nodes, vals / mass, density_in.survival_prob * kept, lo_kept, hi_kept)
    return out, atom_up, atom_lo
