import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from msddm import (
    Boundary,
    DomainError,
    StageTheta,
    boundary_probability,
    conditional_fpt_density,
    conditional_mean_dt,
    error_rate,
    fpt_cdf,
    fpt_density,
    fpt_laplace_conditional,
    fpt_laplace_joint,
    mean_decision_time,
    shift_to_symmetric,
    ss_kernel,
    survival_joint_density,
)

UP, LO = Boundary.UPPER, Boundary.LOWER


def test_error_rate_examples():
    assert error_rate(0.0, StageTheta(0.0, 1.0, 1.0)) == pytest.approx(0.5, abs=1e-15)
    assert error_rate(0.0, StageTheta(1.0, 1.0, 1.0)) == pytest.approx(1 / (1 + math.e**2), rel=1e-13)
    assert error_rate(1.0 - 1e-12, StageTheta(0.0, 1.0, 1.0)) == pytest.approx(0.0, abs=1e-11)


def test_error_rate_is_lower_exit_probability_under_reflection():
    pos = error_rate(0.1, StageTheta(0.7, 1.0, 1.0))
    neg = StageTheta(-0.7, 1.0, 1.0)
    assert error_rate(-0.1, neg) == pytest.approx(1 - pos, rel=1e-13)
    assert boundary_probability(-0.1, neg, UP) == pytest.approx(pos, rel=1e-13)


def test_mean_decision_time_examples():
    assert mean_decision_time(0.0, StageTheta(0.0, 1.0, 1.0)) == pytest.approx(1.0)
    assert mean_decision_time(0.0, StageTheta(1.0, 1.0, 1.0)) == pytest.approx(math.tanh(1.0), rel=1e-13)
    assert mean_decision_time(0.5, StageTheta(0.0, 2.0, 1.0)) == pytest.approx(0.1875)


def test_outside_thresholds_rejected():
    with pytest.raises(DomainError):
        error_rate(1.5, StageTheta(0.1, 1.0, 1.0))
    with pytest.raises(DomainError):
        StageTheta(0.1, 0.0, 1.0)
    with pytest.raises(DomainError):
        StageTheta(0.1, 1.0, 1.0, 2.0)


def test_shift_to_symmetric():
    z, x = shift_to_symmetric(-1.0, 3.0, 0.5)
    assert z == 2.0 and x == pytest.approx(-0.5)


def test_asymmetric_thresholds_match_shifted_problem():
    th = StageTheta(0.4, 1.2, 3.0, -1.0)
    sym = StageTheta(0.4, 1.2, 2.0)
    assert error_rate(0.5, th) == pytest.approx(error_rate(-0.5, sym), rel=1e-13)
    assert mean_decision_time(0.5, th) == pytest.approx(mean_decision_time(-0.5, sym), rel=1e-13)


def test_ss_kernel_against_brute_force():
    k = np.arange(-1_000_000, 1_000_001)
    w = 1.0 + 2.0 * k * 2.0
    brute = np.sum(w / (math.sqrt(2 * math.pi)) * np.exp(-w * w / 2.0))
    assert ss_kernel(1.0, 1.0, 2.0) == pytest.approx(brute, abs=1e-12)


def test_ss_kernel_rejects_bad_input():
    with pytest.raises(DomainError):
        ss_kernel(1.0, 2.0, 1.0)
    with pytest.raises(DomainError):
        ss_kernel(0.0, 0.0, 1.0)


@pytest.mark.parametrize("a", [0.0, 0.8, -1.3])
def test_density_integrates_to_one(a):
    th = StageTheta(a, 1.0, 1.0)
    total, _ = quad(lambda t: fpt_density(t, 0.2, th), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_density_is_sum_of_joint_densities():
    th = StageTheta(0.6, 1.3, 1.5)
    t = np.linspace(0.05, 4, 40)
    up, _ = conditional_fpt_density(t, 0.3, th, UP)
    lo, _ = conditional_fpt_density(t, 0.3, th, LO)
    assert np.max(np.abs(fpt_density(t, 0.3, th) - up - lo)) < 1e-12


def test_conditional_density_normalised():
    th = StageTheta(0.6, 1.0, 1.0)
    _, cond = conditional_fpt_density(np.array([0.5]), 0.1, th, LO)
    total, _ = quad(lambda t: float(conditional_fpt_density(np.array([t]), 0.1, th, LO)[1][0]),
                    0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)
    assert cond[0] > 0


def test_cdf_is_integral_of_density():
    th = StageTheta(0.3, 0.9, 1.2)
    for t in (0.2, 1.0, 3.0):
        val, _ = quad(lambda s: fpt_density(s, -0.4, th), 0, t, limit=200)
        assert fpt_cdf(t, -0.4, th) == pytest.approx(val, abs=1e-9)


def test_representations_agree():
    th = StageTheta(0.5, 1.0, 1.0)
    t = np.linspace(0.5, 2.0, 50)
    small = fpt_density(t, 0.0, th, repr="small_time")
    large = fpt_density(t, 0.0, th, repr="large_time")
    assert np.max(np.abs(small - large)) < 1e-8


def test_conditional_mean_total_expectation():
    th = StageTheta(0.7, 1.1, 1.4)
    p_up = boundary_probability(0.2, th, UP)
    mix = p_up * conditional_mean_dt(0.2, th, UP)[1] + (1 - p_up) * conditional_mean_dt(0.2, th, LO)[1]
    hats = conditional_mean_dt(0.2, th, UP)[0] + conditional_mean_dt(0.2, th, LO)[0]
    assert hats == pytest.approx(mean_decision_time(0.2, th), abs=1e-12)
    assert mix == pytest.approx(mean_decision_time(0.2, th), abs=1e-8)


def test_zero_drift_conditionals_symmetric():
    th = StageTheta(0.0, 1.0, 1.0)
    assert conditional_mean_dt(0.0, th, UP)[1] == pytest.approx(conditional_mean_dt(0.0, th, LO)[1], abs=1e-9)


def test_survival_density_mass_matches_cdf():
    th = StageTheta(0.4, 1.0, 1.0)
    x = np.linspace(-1, 1, 2001)
    g = survival_joint_density(x, 0.7, 0.1, th)
    mass = np.trapezoid(g, x)
    assert mass == pytest.approx(1 - fpt_cdf(0.7, 0.1, th), abs=1e-6)


def test_laplace_transform_oracles():
    th = StageTheta(0.9, 1.0, 1.0)
    for b in (UP, LO):
        assert fpt_laplace_conditional(0.0, 0.2, th, b) == pytest.approx(1.0, abs=1e-10)
        h = 1e-5
        slope = (fpt_laplace_conditional(h, 0.2, th, b) - fpt_laplace_conditional(-h, 0.2, th, b)) / (2 * h)
        assert -slope == pytest.approx(conditional_mean_dt(0.2, th, b)[1], abs=1e-5)
    total = fpt_laplace_joint(0.0, 0.2, th, UP) + fpt_laplace_joint(0.0, 0.2, th, LO)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_small_drift_continuity():
    th0 = StageTheta(0.0, 1.0, 1.0)
    th1 = StageTheta(1e-7, 1.0, 1.0)
    for fn in (error_rate, mean_decision_time):
        assert abs(fn(0.3, th1) - fn(0.3, th0)) < 1e-5
    for b in (UP, LO):
        assert abs(conditional_mean_dt(0.3, th1, b)[1] - conditional_mean_dt(0.3, th0, b)[1]) < 1e-5


@settings(max_examples=60, deadline=None)
@given(a=st.floats(-3, 3), sigma=st.floats(0.2, 3), z=st.floats(0.2, 3), frac=st.floats(-0.95, 0.95))
def test_probabilities_and_moments_consistent(a, sigma, z, frac):
    th = StageTheta(a, sigma, z)
    x0 = frac * z
    p_up = boundary_probability(x0, th, UP)
    p_lo = boundary_probability(x0, th, LO)
    assert 0.0 <= p_up <= 1.0 and p_up + p_lo == pytest.approx(1.0, abs=1e-12)
    m = mean_decision_time(x0, th)
    assert m > 0
    hats = conditional_mean_dt(x0, th, UP)[0] + conditional_mean_dt(x0, th, LO)[0]
    assert hats == pytest.approx(m, rel=1e-7, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-2, 2), frac=st.floats(-0.9, 0.9))
def test_cdf_nondecreasing(a, frac):
    th = StageTheta(a, 1.0, 1.0)
    F = fpt_cdf(np.linspace(0.01, 5, 60), frac, th)
    assert np.all(np.diff(F) >= -1e-12)
    assert 0 <= F[0] and F[-1] <= 1 + 1e-12
