import math

import numpy as np
import pytest

from msddm import (
    ExponentialTail,
    Boundary,
    DomainError,
    ModelSpec,
    OUModel,
    OUStage,
    analyze,
    discretize_thresholds,
    ou_fpt_distribution,
    ou_from_ddm,
    ou_threshold_curve,
    ou_time_inverse,
    ou_time_transform,
    summarize,
    with_leak,
)

UP, LO = Boundary.UPPER, Boundary.LOWER
REFERENCE = OUModel(0.0, (OUStage(0.5, 0.5, 1.0, 2.0),))


def test_time_transform_value():
    st = OUStage(0.0, 1.0, 1.0, 1.0)
    assert ou_time_transform(1.0, st) == pytest.approx((math.e**2 - 1) / 2, rel=1e-14)


def test_time_transform_small_leak_limit():
    st = OUStage(0.3, 1e-9, 1.0, 1.0, start_time=0.5)
    assert ou_time_transform(1.5, st) == pytest.approx(1.0, abs=1e-8)
    assert ou_time_transform(2.5, OUStage(0.3, 0.0, 1.7, 1.0, start_time=0.5)) == pytest.approx(1.7**2 * 2.0)


def test_time_transform_round_trip():
    st = OUStage(0.2, 0.8, 1.3, 1.0, start_time=0.4)
    t = np.linspace(0.4, 5.0, 30)
    back = ou_time_inverse(ou_time_transform(t, st), st)
    assert np.max(np.abs(back - t)) < 1e-12
    assert np.all(np.diff(ou_time_transform(t, st)) > 0)


def test_time_before_stage_rejected():
    with pytest.raises(DomainError):
        ou_time_transform(0.1, OUStage(0.0, 1.0, 1.0, 1.0, start_time=0.5))


def test_threshold_curves():
    st = OUStage(1.0, 1.0, 1.0, 2.0)
    assert ou_threshold_curve(0.0, st, UP) == 2.0
    assert ou_threshold_curve(0.0, st, LO) == -2.0
    assert ou_threshold_curve(3.194528, st, UP) == pytest.approx(math.e + 1, abs=1e-6)
    sym = OUStage(0.0, 0.7, 1.2, 1.5)
    u = np.linspace(0, 3, 7)
    r = np.sqrt(1 + 2 * 0.7 * u / 1.2**2)
    assert np.allclose(ou_threshold_curve(u, sym, UP), 1.5 * r)
    assert np.allclose(ou_threshold_curve(u, sym, LO), -1.5 * r)


def test_negative_leak_rejected():
    with pytest.raises(DomainError):
        OUStage(0.1, -0.5, 1.0, 1.0)


def test_discretization_pieces():
    st = OUStage(0.0, 1e-12, 1.0, 1.0)
    pieces = discretize_thresholds(st, 2.0, 4)
    assert len(pieces) == 4
    assert pieces[0][0] == 0.0 and pieces[-1][1] == 2.0
    for lo_u, hi_u, lo, hi in pieces:
        assert lo == pytest.approx(-1.0, abs=1e-9) and hi == pytest.approx(1.0, abs=1e-9)
    curved = discretize_thresholds(OUStage(0.3, 1.0, 1.0, 1.0), 5.0, 8)
    edges_t = [ou_time_inverse(p[0], OUStage(0.3, 1.0, 1.0, 1.0)) for p in curved]
    assert np.allclose(np.diff(edges_t), edges_t[1] - edges_t[0])
    with pytest.raises(DomainError):
        discretize_thresholds(st, 1.0, 0)


def test_leak_free_model_matches_ddm():
    spec = ModelSpec.from_arrays(-0.2, [0.1, 0.2, 0.05, 0.3], [1, 1.5, 1.25, 2], [0, 1, 2, 3], 2.0)
    ref = summarize(spec)
    res = ou_fpt_distribution(with_leak(ou_from_ddm(spec), 1e-6), pieces_per_stage=8)
    assert abs(res.overall_er - ref.overall_er) < 1e-4
    assert abs(res.overall_mdt - ref.overall_mdt) < 1e-4


def test_zero_leak_pieces_are_exact():
    spec = ModelSpec.from_arrays(0.1, [0.4, -0.2], [1.0, 1.3], [0, 0.7], 1.0)
    ref = analyze(spec, time_grid=np.linspace(0.05, 6, 25))
    res = ou_fpt_distribution(ou_from_ddm(spec), pieces_per_stage=4, time_grid=ref.times)
    assert res.overall_er == pytest.approx(ref.overall_er, abs=1e-9)
    assert res.overall_mdt == pytest.approx(ref.overall_mdt, abs=1e-8)
    assert np.max(np.abs(res.cdf - ref.cdf)) < 1e-8


def test_reference_case_basic_shape():
    res = ou_fpt_distribution(REFERENCE, pieces_per_stage=16)
    assert 0.05 < res.overall_er < 0.08
    assert np.all(np.diff(res.cdf) >= -1e-10)
    assert res.cdf[-1] > 1 - 1e-3
    mix = res.p_upper * res.cond_mdt_upper + res.p_lower * res.cond_mdt_lower
    assert mix == pytest.approx(res.overall_mdt, abs=1e-8)


def test_leak_slows_decisions_relative_to_ddm():
    # the leak pulls evidence toward a/lam = 1, inside the thresholds and away from -z
    ddm = summarize(ModelSpec.from_arrays(0.0, [0.5], [1.0], [0.0], 2.0))
    ou = ou_fpt_distribution(REFERENCE, pieces_per_stage=8)
    assert ou.overall_mdt > ddm.overall_mdt
    assert ou.overall_er < ddm.overall_er


def test_comoving_and_plain_pieces_agree_roughly():
    a = ou_fpt_distribution(REFERENCE, pieces_per_stage=16)
    b = ou_fpt_distribution(REFERENCE, pieces_per_stage=16, comoving=False, time_grid=a.times)
    assert abs(a.overall_er - b.overall_er) < 5e-3
    assert np.max(np.abs(a.cdf - b.cdf)) < 2e-2


def test_multistage_ou_runs_and_is_consistent():
    model = OUModel(0.0, (OUStage(0.3, 0.4, 1.0, 1.5), OUStage(-0.2, 1.0, 0.8, 1.0, start_time=0.8)))
    res = ou_fpt_distribution(model, pieces_per_stage=8)
    assert 0 < res.overall_er < 1
    assert res.cdf[-1] == pytest.approx(1.0, abs=1e-3)
    assert sum(a.mass for a in res.atoms) > 0


def test_strong_leak_tail_converges():
    # decisions are rare escapes here, so most mass leaves through the exponential tail
    model = OUModel(0.0, (OUStage(0.5, 2.0, 1.0, 2.0),))
    coarse = ou_fpt_distribution(model, pieces_per_stage=16)
    fine = ou_fpt_distribution(model, pieces_per_stage=32)
    assert isinstance(fine.per_stage[-1].t_end, float) and math.isinf(fine.per_stage[-1].t_end)
    assert abs(coarse.overall_er - fine.overall_er) < 5e-4
    assert abs(coarse.overall_mdt - fine.overall_mdt) / fine.overall_mdt < 0.02
    # long simulation at dt=5e-4 gave ER 0.0257 +/- 0.0029 and mDT 177.6 +/- 3.2
    assert 0.018 < fine.overall_er < 0.032
    assert 168 < fine.overall_mdt < 187
    assert fine.cdf_at(1e4) == pytest.approx(1.0, abs=1e-9)
    mix = fine.p_upper * fine.cond_mdt_upper + fine.p_lower * fine.cond_mdt_lower
    assert mix == pytest.approx(fine.overall_mdt, rel=1e-10)


def test_exponential_tail_segment():
    tail = ExponentialTail(2.0, 0.5, 0.7)
    m = tail.metrics()
    assert m.mdt_i == pytest.approx(4.0) and m.p_upper == pytest.approx(0.7)
    assert tail.exited(2.0) == 0.0 and tail.exited(4.0) == pytest.approx(1 - math.exp(-1))
    ts = np.linspace(2.0, 60.0, 200001)
    assert np.trapezoid(tail.rate_at(ts), ts) == pytest.approx(tail.exited(60.0), abs=1e-8)
    with pytest.raises(DomainError):
        ExponentialTail(0.0, 0.0, 0.5)
