import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msddm import (
    Boundary,
    ConditionedDensity,
    DegenerateModelError,
    DomainError,
    StageTheta,
    apply_threshold_change,
    error_rate,
    fpt_cdf,
    fpt_density,
    make_grid,
    mean_decision_time,
    propagate_stage,
    stage_cdf,
    stage_conditional_mean_dt,
    stage_error_rate,
    stage_fpt_density,
    stage_joint_fpt_density,
    stage_mean_dt,
    stage_metrics,
)
from msddm.core import conditional_mean_dt

UP, LO = Boundary.UPPER, Boundary.LOWER


def _first_stage(x0=0.2, theta=StageTheta(0.4, 1.0, 1.0), duration=0.6):
    d0 = ConditionedDensity.point_mass(x0, *theta.bounds)
    out, S = propagate_stage(d0, theta, duration)
    return d0, out, S


def test_grid_weights_integrate_polynomials():
    nodes, w = make_grid(-1.0, 1.0, 255)
    f = 1 - nodes**2
    assert w @ f == pytest.approx(4 / 3, abs=1e-12)


def test_survival_matches_closed_form_cdf():
    th = StageTheta(0.4, 1.0, 1.0)
    _, out, S = _first_stage(theta=th)
    assert S == pytest.approx(1 - fpt_cdf(0.6, 0.2, th), abs=1e-10)
    assert out.mass() == pytest.approx(1.0, abs=1e-12)
    assert out.survival_prob == pytest.approx(S)


def test_point_mass_outside_rejected():
    with pytest.raises(DomainError):
        ConditionedDensity.point_mass(2.0, -1.0, 1.0)


def test_last_stage_reduces_to_pure_ddm():
    th = StageTheta(-0.3, 1.2, 1.5)
    d0 = ConditionedDensity.point_mass(0.4, *th.bounds)
    assert stage_error_rate(d0, None, 0.0, th) == pytest.approx(error_rate(0.4, th), abs=1e-12)
    assert stage_mean_dt(d0, None, 0.0, th, 0.0, np.inf) == pytest.approx(mean_decision_time(0.4, th), abs=1e-12)
    for b in (UP, LO):
        got = stage_conditional_mean_dt(d0, None, 0.0, th, 0.0, np.inf, b)
        assert got == pytest.approx(conditional_mean_dt(0.4, th, b)[1], abs=1e-10)


def test_splitting_a_stage_changes_nothing():
    th = StageTheta(0.4, 1.0, 1.0)
    d0 = ConditionedDensity.point_mass(0.2, *th.bounds)
    whole_out, whole_S = propagate_stage(d0, th, 1.0)
    half_out, s1 = propagate_stage(d0, th, 0.5)
    second = StageTheta(0.4, 1.0, 1.0, start_time=0.5)
    end_out, s2 = propagate_stage(half_out, second, 0.5)
    assert s1 * s2 == pytest.approx(whole_S, abs=1e-10)
    assert np.max(np.abs(end_out.values - whole_out.values)) < 1e-7
    m_whole = stage_metrics(d0, whole_out, whole_S, th, 0.0, 1.0)
    m1 = stage_metrics(d0, half_out, s1, th, 0.0, 0.5)
    m2 = stage_metrics(half_out, end_out, s2, second, 0.5, 1.0)
    er = (m1.p_lower + s1 * m2.p_lower) / (m1.p_decide + s1 * m2.p_decide)
    assert er == pytest.approx(m_whole.er_i, abs=1e-9)
    hat = m1.hat_mdt_upper + s1 * m2.hat_mdt_upper
    assert hat == pytest.approx(m_whole.hat_mdt_upper, abs=1e-9)


def test_stage_metrics_identity():
    th = StageTheta(0.4, 1.0, 1.0)
    d0, out, S = _first_stage(theta=th)
    m = stage_metrics(d0, out, S, th, 0.0, 0.6)
    mix = (1 - m.er_i) * m.cond_mdt_upper + m.er_i * m.cond_mdt_lower
    assert mix == pytest.approx(m.mdt_i, abs=1e-8)
    assert m.p_upper + m.p_lower + m.survival == pytest.approx(1.0, abs=1e-12)
    assert 0.0 < m.mdt_i < 0.6


def test_stage_density_independent_of_deadline():
    th = StageTheta(0.2, 1.0, 1.0, start_time=1.0)
    _, out, _ = _first_stage()
    local = StageTheta(0.2, 1.0, 1.0)
    for deadline in (0.5, 1.5):
        nxt, S = propagate_stage(out, local, deadline)
        m = stage_metrics(out, nxt, S, th, 1.0, 1.0 + deadline)
        # nodes next to a threshold exit almost at once, so sample times geometrically
        ts = 1.0 + np.geomspace(1e-10, deadline, 20001)
        up = np.trapezoid(stage_joint_fpt_density(ts, out, th, UP), ts)
        lo = np.trapezoid(stage_joint_fpt_density(ts, out, th, LO), ts)
        assert up == pytest.approx(m.p_upper, abs=1e-6)
        assert lo == pytest.approx(m.p_lower, abs=1e-6)
    t = np.array([1.1, 1.5, 2.0])
    joint = stage_joint_fpt_density(t, out, th, UP) + stage_joint_fpt_density(t, out, th, LO)
    assert np.max(np.abs(joint - stage_fpt_density(t, out, th))) < 1e-12


def test_stage_density_integrates_to_cdf():
    th = StageTheta(0.2, 1.0, 1.0, start_time=1.0)
    _, out, _ = _first_stage()
    ts = 1.0 + np.geomspace(1e-10, 1.0, 20001)
    f = stage_fpt_density(ts, out, th)
    integral = np.trapezoid(f, ts)
    assert integral == pytest.approx(stage_cdf(2.0, out, th), abs=1e-6)


def test_point_mass_stage_density_matches_core():
    th = StageTheta(0.5, 1.0, 1.0)
    d0 = ConditionedDensity.point_mass(0.1, *th.bounds)
    t = np.array([0.3, 0.8])
    assert np.allclose(stage_fpt_density(t, d0, th), fpt_density(t, 0.1, th), atol=1e-14)


def test_threshold_change_identity_and_extension():
    _, out, _ = _first_stage()
    same, au, al = apply_threshold_change(out, 1.0, 1.0)
    assert same is out and au == 0 and al == 0
    wider, au, al = apply_threshold_change(out, 1.0, 1.5)
    assert au == 0 and al == 0 and wider.mass() == pytest.approx(1.0)


def test_threshold_collapse_atoms():
    _, out, _ = _first_stage()
    new, au, al = apply_threshold_change(out, 1.0, 0.5)
    xs = np.concatenate(([-1.0], out.grid, [1.0]))
    ys = np.concatenate(([0.0], out.values, [0.0]))
    fine = np.linspace(-1, 1, 200001)
    dens = np.interp(fine, xs, ys)
    up_expected = np.trapezoid(np.where(fine >= 0.5, dens, 0), fine)
    lo_expected = np.trapezoid(np.where(fine <= -0.5, dens, 0), fine)
    assert au == pytest.approx(up_expected, abs=1e-5)
    assert al == pytest.approx(lo_expected, abs=1e-5)
    assert new.mass() == pytest.approx(1.0, abs=1e-12)
    assert new.lower >= -0.5 and new.upper <= 0.5


def test_collapse_of_point_mass_is_degenerate():
    d0 = ConditionedDensity.point_mass(0.8, -1.0, 1.0)
    with pytest.raises(DegenerateModelError):
        apply_threshold_change(d0, 1.0, 0.5)


def test_support_must_fit_stage():
    _, out, _ = _first_stage()
    with pytest.raises(DomainError):
        propagate_stage(out, StageTheta(0.1, 1.0, 0.5), 0.5)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-1.5, 1.5), sigma=st.floats(0.5, 2.0), dur=st.floats(0.05, 3.0),
       frac=st.floats(-0.8, 0.8))
def test_mass_bookkeeping(a, sigma, dur, frac):
    th = StageTheta(a, sigma, 1.0)
    d0 = ConditionedDensity.point_mass(frac, *th.bounds)
    out, S = propagate_stage(d0, th, dur)
    assert S == pytest.approx(1 - fpt_cdf(dur, frac, th), abs=1e-8)
    if out is not None:
        m = stage_metrics(d0, out, S, th, 0.0, dur)
        assert m.p_upper + m.p_lower + S == pytest.approx(1.0, abs=1e-8)
        assert m.p_upper == pytest.approx(float(fpt_cdf(dur, frac, th, UP)), abs=1e-8)
