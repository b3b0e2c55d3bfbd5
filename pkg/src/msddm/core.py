"""Closed-form first-passage-time results for the constant-parameter DDM.

Every function in this module works on a single stage with constant drift,
diffusion and thresholds.  Thresholds may be asymmetric: they are translated
to a symmetric pair ``(-z, z)`` internally.  Negative drift is handled by the
reflection ``x -> -x`` which swaps the boundary labels, so the formulas
themselves are only ever evaluated with non-negative drift.

All array-valued arguments broadcast against each other following numpy rules.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

__all__ = [
    "Boundary",
    "DomainError",
    "StageTheta",
    "DRIFT_TOL",
    "SERIES_TOL",
    "shift_to_symmetric",
    "boundary_probability",
    "error_rate",
    "mean_decision_time",
    "conditional_mean_dt",
    "ss_kernel",
    "fpt_density",
    "conditional_fpt_density",
    "fpt_cdf",
    "survival_joint_density",
    "fpt_laplace_conditional",
    "fpt_laplace_joint",
]

#: |snr * z| below this value is treated as zero drift.
DRIFT_TOL = 1e-8
_SMALL_DRIFT = 1e-2
#: Relative truncation tolerance for every infinite series.
SERIES_TOL = 1e-12

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_MAX_SHELLS = 100_000


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a formula."""


class Boundary(enum.Enum):
    UPPER = 1
    LOWER = -1

    @property
    def sign(self) -> int:
        return self.value

    def flipped(self) -> "Boundary":
        return Boundary.LOWER if self is Boundary.UPPER else Boundary.UPPER


@dataclass(frozen=True)
class StageTheta:
    """Parameters of one DDM stage.

    ``lower_threshold`` defaults to ``-upper_threshold``.  ``start_time`` is the
    absolute time at which the stage begins.
    """

    drift: float
    diffusion: float
    upper_threshold: float
    lower_threshold: float | None = None
    start_time: float = 0.0

    def __post_init__(self):
        if self.lower_threshold is None:
            object.__setattr__(self, "lower_threshold", -float(self.upper_threshold))
        if not self.diffusion > 0:
            raise DomainError(f"diffusion must be positive, got {self.diffusion}")
        if not self.lower_threshold < self.upper_threshold:
            raise DomainError(
                f"lower threshold {self.lower_threshold} must be below "
                f"upper threshold {self.upper_threshold}"
            )
        if not np.isfinite(self.drift):
            raise DomainError(f"drift must be finite, got {self.drift}")

    @property
    def snr(self) -> float:
        return self.drift / self.diffusion**2

    @property
    def half_width(self) -> float:
        return 0.5 * (self.upper_threshold - self.lower_threshold)

    @property
    def center(self) -> float:
        return 0.5 * (self.upper_threshold + self.lower_threshold)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.lower_threshold, self.upper_threshold)


def shift_to_symmetric(lower, upper, x0):
    """Translate ``(lower, upper)`` to ``(-z, z)``.  Returns ``(z, x0_shifted)``."""
    if not lower < upper:
        raise DomainError(f"lower threshold {lower} must be below upper threshold {upper}")
    z = 0.5 * (upper - lower)
    return z, np.asarray(x0, dtype=float) - 0.5 * (upper + lower)


@dataclass(frozen=True)
class _Canon:
    """Stage in canonical coordinates: symmetric thresholds, drift >= 0."""

    x: np.ndarray
    z: float
    drift: float
    sigma: float
    flipped: bool

    @property
    def s(self) -> float:
        return self.drift / self.sigma**2

    @property
    def zero_drift(self) -> bool:
        return abs(self.s * self.z) < DRIFT_TOL

    def label(self, b: Boundary) -> Boundary:
        """Canonical label of the original boundary ``b``."""
        return b.flipped() if self.flipped else b


def _canon(x0, theta: StageTheta, strict: bool = True) -> _Canon:
    z, x = shift_to_symmetric(theta.lower_threshold, theta.upper_threshold, x0)
    if strict and np.any((x <= -z) | (x >= z)):
        raise DomainError(
            f"starting point must lie strictly inside ({theta.lower_threshold}, "
            f"{theta.upper_threshold})"
        )
    flipped = theta.drift < 0
    if flipped:
        x = -x
    return _Canon(x=x, z=z, drift=abs(theta.drift), sigma=theta.diffusion, flipped=flipped)


def _out(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


# -- probabilities and moments ----------------------------------------------


def _p_lower(c: _Canon, x=None):
    x = c.x if x is None else x
    z, s = c.z, c.s
    if c.zero_drift:
        return (z - x) / (2.0 * z)
    return np.exp(-2.0 * s * (z + x)) * np.expm1(-2.0 * s * (z - x)) / np.expm1(-4.0 * s * z)


def _p_upper(c: _Canon, x=None):
    x = c.x if x is None else x
    z, s = c.z, c.s
    if c.zero_drift:
        return (z + x) / (2.0 * z)
    return np.expm1(-2.0 * s * (z + x)) / np.expm1(-4.0 * s * z)


def _p_canon(c: _Canon, b: Boundary, x=None):
    return _p_upper(c, x) if c.label(b) is Boundary.UPPER else _p_lower(c, x)


def boundary_probability(x0, theta: StageTheta, b: Boundary):
    """Probability that the first exit happens through boundary ``b``."""
    return _out(_p_canon(_canon(x0, theta), b))


def error_rate(x0, theta: StageTheta):
    """Probability of absorbing at the lower threshold.

    For positive drift this is the usual error rate; outputs stay tied to the
    boundary labels so that ``error_rate(a, x0) == 1 - error_rate(-a, -x0)``.
    """
    return boundary_probability(x0, theta, Boundary.LOWER)


def _mdt(c: _Canon, x=None):
    x = c.x if x is None else x
    if c.zero_drift:
        return (c.z**2 - x**2) / c.sigma**2
    if abs(c.s * c.z) < _SMALL_DRIFT:
        # the closed form cancels badly here; the boundary decomposition does not
        return (_p_upper(c, x) * _cond_mdt_canon(c, True, x)
                + _p_lower(c, x) * _cond_mdt_canon(c, False, x))
    return ((_p_upper(c, x) - _p_lower(c, x)) * c.z - x) / c.drift


def mean_decision_time(x0, theta: StageTheta):
    """Unconditional expected first-passage time from ``x0``."""
    return _out(_mdt(_canon(x0, theta)))


def _coth_minus_inv(y):
    """``coth(y) - 1/y``, accurate near zero."""
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < 0.1
    ys = np.where(small, y, 0.0)
    y2 = ys * ys
    series = ys * (1.0 / 3 + y2 * (-1.0 / 45 + y2 * (2.0 / 945 + y2 * (-1.0 / 4725 + y2 * 2.0 / 93555))))
    yl = np.where(small, 1.0, y)
    return np.where(small, series, 1.0 / np.tanh(yl) - 1.0 / yl)


def _cond_mdt_canon(c: _Canon, upper: bool, x=None):
    """E[tau | exit through canonical upper (or lower)]."""
    x = c.x if x is None else x
    z = c.z
    d = (z + x) if upper else (z - x)
    if c.zero_drift:
        return (4.0 * z**2 - d**2) / (3.0 * c.sigma**2)
    s = c.s
    return (2.0 * z * _coth_minus_inv(2.0 * s * z) - d * _coth_minus_inv(s * d)) / c.drift


def conditional_mean_dt(x0, theta: StageTheta, b: Boundary):
    """Return ``(hat_mdt, mdt)`` for boundary ``b``.

    ``hat_mdt = E[tau 1(exit at b)]`` and ``mdt = E[tau | exit at b]``.
    """
    c = _canon(x0, theta)
    upper = c.label(b) is Boundary.UPPER
    mdt = _cond_mdt_canon(c, upper)
    p = _p_upper(c) if upper else _p_lower(c)
    return _out(p * mdt), _out(mdt)


# -- series machinery --------------------------------------------------------


def _shell_sum(term, shape, tol=SERIES_TOL, k0_only=False):
    """Sum ``term(k)`` over k = 0, +-1, +-2, ... in symmetric shells.

    Stops once two consecutive shells are each below ``tol`` relative to the
    running sum (or exactly zero).
    """
    total = np.zeros(shape) + term(0)
    if k0_only:
        return total
    quiet = np.zeros(shape, dtype=int)
    k = 1
    while True:
        shell = term(k) + term(-k)
        total = total + shell
        small = np.abs(shell) <= tol * np.abs(total)
        quiet = np.where(small, quiet + 1, 0)
        if np.all(quiet >= 2):
            return total
        k += 1
        if k > _MAX_SHELLS:
            raise RuntimeError("image series failed to converge")


def ss_kernel(t, u, v, tol: float = SERIES_TOL):
    """Two-sided image sum used by the small-time FPT density.

    ``sum_k (v-u+2kv) / (sqrt(2 pi) t^1.5) exp(-(v-u+2kv)^2 / 2t)`` for ``u < v``.
    """
    t, u, v = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, u, v)))
    if np.any(t <= 0):
        raise DomainError("ss_kernel requires t > 0")
    if np.any(u >= v):
        raise DomainError("ss_kernel requires u < v")
    if tol <= 0:
        raise DomainError("tol must be positive")
    d = v - u

    def term(k):
        w = d + 2.0 * k * v
        return w / (_SQRT_2PI * t**1.5) * np.exp(-(w * w) / (2.0 * t))

    return _out(_shell_sum(term, t.shape, tol))


def _small_time_joint(t, c: _Canon, upper: bool, tol=SERIES_TOL):
    """Joint density f^(+/-) in canonical coordinates, small-time image series."""
    sig = c.sigma
    nu = c.drift / sig
    v = 2.0 * c.z / sig
    d = (c.z - c.x) / sig if upper else (c.z + c.x) / sig
    mu = nu if upper else -nu
    t, d = np.broadcast_arrays(t, d)

    def term(k):
        w = d + 2.0 * k * v
        # exp(mu*d - mu^2 t/2 - w^2/2t) rewritten without overflow
        expo = -((w - mu * t) ** 2) / (2.0 * t) - 2.0 * k * v * mu
        return w / (_SQRT_2PI * t**1.5) * np.exp(expo)

    return _shell_sum(term, t.shape, tol)


def _large_time_terms(t, c: _Canon, upper: bool, integrated: bool, tol=SERIES_TOL):
    """Eigenfunction series for the joint density (or its tail integral)."""
    sig, z = c.sigma, c.z
    x = c.x
    t, x = np.broadcast_arrays(t, x)
    pref = math.pi * sig**2 / (4.0 * z**2)
    if upper:
        base = c.s * (z - x)
        phase = (z + x) / (2.0 * z)
    else:
        base = -c.s * (z + x)
        phase = (z - x) / (2.0 * z)
    drift_rate = c.drift**2 / (2.0 * sig**2)
    mode_rate = math.pi**2 * sig**2 / (8.0 * z**2)
    total = np.zeros(t.shape)
    quiet = np.zeros(t.shape, dtype=int)
    n = 1
    while True:
        lam = drift_rate + mode_rate * n * n
        env = pref * n * np.exp(base - lam * t)
        if integrated:
            env = env / lam
        term = (-1.0) ** (n - 1) * env * np.sin(n * math.pi * phase)
        total = total + term
        # envelope decreases once n^2 * mode_rate * t exceeds 1/2
        past_peak = 2.0 * mode_rate * n * n * t >= 1.0
        small = past_peak & (env <= tol * np.abs(total))
        quiet = np.where(small, quiet + 1, 0)
        if np.all(quiet >= 2):
            return total
        n += 1
        if n > _MAX_SHELLS:
            raise RuntimeError("eigenfunction series failed to converge")


def _pick_small(t, c: _Canon, repr_: str):
    if repr_ == "small_time":
        return np.ones(np.shape(t), dtype=bool)
    if repr_ == "large_time":
        return np.zeros(np.shape(t), dtype=bool)
    if repr_ != "auto":
        raise ValueError(f"unknown representation {repr_!r}")
    return c.sigma**2 * np.asarray(t) / c.z**2 < 1.0


def _by_regime(t, c: _Canon, repr_: str, small_fn, large_fn):
    t = np.asarray(t, dtype=float)
    t_b, x_b = np.broadcast_arrays(t, c.x)
    out = np.empty(t_b.shape)
    small = _pick_small(t_b, c, repr_)
    for mask, fn in ((small, small_fn), (~small, large_fn)):
        if np.any(mask):
            sub = _Canon(x=x_b[mask], z=c.z, drift=c.drift, sigma=c.sigma, flipped=c.flipped)
            out[mask] = fn(t_b[mask], sub)
    return out


def _joint_density_canon(t, c: _Canon, upper: bool, repr_="auto"):
    return _by_regime(
        t, c, repr_,
        lambda tt, cc: _small_time_joint(tt, cc, upper),
        lambda tt, cc: _large_time_terms(tt, cc, upper, integrated=False),
    )


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("time must be positive (measured from stage start)")
    return t


def fpt_density(t, x0, theta: StageTheta, repr: str = "auto"):
    """Density of the first-passage time, ``t`` measured from stage start.

    ``repr`` selects the small-time image series, the large-time eigenfunction
    series, or ``"auto"`` (small-time when ``sigma^2 t / z^2 < 1``).
    """
    t = _check_t(t)
    c = _canon(x0, theta)
    f = _joint_density_canon(t, c, True, repr) + _joint_density_canon(t, c, False, repr)
    return _out(f)


def conditional_fpt_density(t, x0, theta: StageTheta, b: Boundary, repr: str = "auto"):
    """Return ``(joint, conditional)`` densities for exits through ``b``.

    The conditional density is ``nan`` where the exit probability is zero.
    """
    t = _check_t(t)
    c = _canon(x0, theta)
    upper = c.label(b) is Boundary.UPPER
    joint = _joint_density_canon(t, c, upper, repr)
    p = _p_upper(c) if upper else _p_lower(c)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(p > 0, joint / np.where(p > 0, p, 1.0), np.nan)
    return _out(joint), _out(cond)


# -- distribution functions ---------------------------------------------------


def _small_time_cdf(t, c: _Canon, upper: bool, tol=SERIES_TOL):
    """P(tau <= t, exit through canonical upper/lower), small-time series.

    Each image term integrates to an inverse-Gaussian CDF; evaluated in log
    space so large image weights never overflow.
    """
    sig = c.sigma
    nu = c.drift / sig
    v = 2.0 * c.z / sig
    d = (c.z - c.x) / sig if upper else (c.z + c.x) / sig
    mu = nu if upper else -nu
    t, d = np.broadcast_arrays(t, d)
    rt = np.sqrt(t)

    def term(k):
        w = d + 2.0 * k * v
        sg = np.where(w >= 0, 1.0, -1.0)
        logc = -2.0 * k * v * mu
        a = logc + log_ndtr(sg * (mu * t - w) / rt)
        b = logc + 2.0 * mu * w + log_ndtr(-sg * (mu * t + w) / rt)
        return sg * (np.exp(a) + np.exp(b))

    return _shell_sum(term, t.shape, tol)


def _joint_cdf_canon(t, c: _Canon, upper: bool, repr_="auto"):
    def large(tt, cc):
        p = _p_upper(cc) if upper else _p_lower(cc)
        return p - _large_time_terms(tt, cc, upper, integrated=True)

    return _by_regime(t, c, repr_, lambda tt, cc: _small_time_cdf(tt, cc, upper), large)


def fpt_cdf(t, x0, theta: StageTheta, b: Boundary | None = None, repr: str = "auto"):
    """``P(tau <= t)``, or ``P(tau <= t, exit at b)`` when ``b`` is given.

    ``t`` is measured from the stage start; ``t <= 0`` gives 0.
    """
    t = np.asarray(t, dtype=float)
    c = _canon(x0, theta)
    t_b, x_b = np.broadcast_arrays(t, c.x)
    out = np.zeros(t_b.shape)
    pos = t_b > 0
    if np.any(pos):
        sub = _Canon(x=x_b[pos], z=c.z, drift=c.drift, sigma=c.sigma, flipped=c.flipped)
        if b is None:
            val = _joint_cdf_canon(t_b[pos], sub, True, repr) + _joint_cdf_canon(t_b[pos], sub, False, repr)
        else:
            val = _joint_cdf_canon(t_b[pos], sub, sub.label(b) is Boundary.UPPER, repr)
        out[pos] = val
    return _out(np.clip(out, 0.0, 1.0))


def _g_small(t, c: _Canon, xs):
    """Image-sum transition density killed at the thresholds (canonical coords)."""
    z, sig = c.z, c.sigma
    var = sig**2 * t
    y = xs - c.x
    base = -(c.drift**2) * t / (2.0 * sig**2) + c.drift * y / sig**2
    shape = np.broadcast(xs, c.x, t).shape

    def term(n):
        e1 = base - (y + 4.0 * n * z) ** 2 / (2.0 * var)
        e2 = base - (2.0 * z - xs - c.x + 4.0 * n * z) ** 2 / (2.0 * var)
        return (np.exp(e1) - np.exp(e2)) / np.sqrt(2.0 * math.pi * var)

    return _shell_sum(term, shape)


def _g_large(t, c: _Canon, xs):
    z, sig = c.z, c.sigma
    drift_rate = c.drift**2 / (2.0 * sig**2)
    mode_rate = math.pi**2 * sig**2 / (8.0 * z**2)
    base = c.drift * (xs - c.x) / sig**2
    shape = np.broadcast(xs, c.x, t).shape
    total = np.zeros(shape)
    quiet = np.zeros(shape, dtype=int)
    n = 1
    while True:
        env = np.exp(base - (drift_rate + mode_rate * n * n) * t) / z
        term = env * np.sin(n * math.pi * (xs + z) / (2 * z)) * np.sin(n * math.pi * (c.x + z) / (2 * z))
        total = total + term
        small = (2.0 * mode_rate * n * n * t >= 1.0) & (env <= SERIES_TOL * np.abs(total))
        quiet = np.where(small, quiet + 1, 0)
        if np.all(quiet >= 2):
            return total
        n += 1
        if n > _MAX_SHELLS:
            raise RuntimeError("eigenfunction series failed to converge")


def survival_joint_density(x, t, x0, theta: StageTheta, repr: str = "auto"):
    """Joint density of ``x(t) = x`` and no exit before ``t``.

    Zero outside the open threshold interval.  ``t`` is measured from stage start.
    """
    t = _check_t(t)
    c = _canon(x0, theta)
    z, xs = shift_to_symmetric(theta.lower_threshold, theta.upper_threshold, x)
    if c.flipped:
        xs = -xs
    xs_b, x0_b, t_b = np.broadcast_arrays(xs, c.x, t)
    out = np.zeros(xs_b.shape)
    inside = (xs_b > -z) & (xs_b < z)
    small = _pick_small(t_b, c, repr)
    for mask, fn in ((inside & small, _g_small), (inside & ~small, _g_large)):
        if np.any(mask):
            sub = _Canon(x=x0_b[mask], z=z, drift=c.drift, sigma=c.sigma, flipped=c.flipped)
            out[mask] = fn(t_b[mask], sub, xs_b[mask])
    return _out(np.maximum(out, 0.0))


# -- Laplace transforms -------------------------------------------------------


def _log_sinh_ratio(a, b):
    """log(sinh(a) / sinh(b)) for 0 <= a <= b, b > 0."""
    return (a - b) + np.log(np.expm1(-2.0 * a) / np.expm1(-2.0 * b))


def fpt_laplace_joint(alpha, x0, theta: StageTheta, b: Boundary):
    """``E[exp(-alpha tau) 1(exit at b)]``.

    Valid for ``alpha >= -drift^2 / (2 sigma^2)``.
    """
    c = _canon(x0, theta)
    alpha = np.asarray(alpha, dtype=float)
    sig2 = c.sigma**2
    k2 = 2.0 * alpha * sig2 + c.drift**2
    if np.any(k2 < 0):
        raise DomainError("alpha below -drift^2/(2 sigma^2): transform diverges")
    k = np.sqrt(k2)
    upper = c.label(b) is Boundary.UPPER
    d = (c.z + c.x) if upper else (c.z - c.x)
    pre = c.s * (c.z - c.x) if upper else -c.s * (c.z + c.x)
    B = 2.0 * c.z * k / sig2
    A = d * k / sig2
    A, B = np.broadcast_arrays(A, B)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(B > 0, np.exp(pre + _log_sinh_ratio(A, np.where(B > 0, B, 1.0))), 0.0)
    ratio = np.where(B > 0, ratio, np.exp(pre) * d / (2.0 * c.z))
    return _out(ratio)


def fpt_laplace_conditional(alpha, x0, theta: StageTheta, b: Boundary):
    """``E[exp(-alpha tau) | exit at b]``."""
    joint = fpt_laplace_joint(alpha, x0, theta, b)
    return _out(np.asarray(joint) / boundary_probability(x0, theta, b))
