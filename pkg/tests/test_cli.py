import csv
import json
import math

import pytest

from msddm import StageTheta, error_rate, mean_decision_time
from msddm.cli import main
from msddm.config import ConfigError, parse_config
from msddm.io import to_json_text


def _model(**stage):
    base = {"t_start": 0.0, "drift": 1.0, "diffusion": 1.0, "z_upper": 1.0}
    base.update(stage)
    return {"x0": 0.0, "stages": [base]}


def _run(tmp_path, doc, *args, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return main([*args, "--config", str(path), "--out", str(tmp_path / "out")])


def test_metrics_single_stage_matches_closed_form(tmp_path, capsys):
    assert _run(tmp_path, {"model": _model()}, "metrics") == 0
    doc = json.loads((tmp_path / "out" / "metrics.json").read_text())
    th = StageTheta(1.0, 1.0, 1.0)
    assert doc["overall_er"] == pytest.approx(error_rate(0.0, th), abs=1e-12)
    assert doc["overall_mdt"] == pytest.approx(mean_decision_time(0.0, th), abs=1e-12)
    assert doc["command"] == "metrics" and len(doc["per_stage"]) == 1
    assert str(tmp_path / "out" / "metrics.json") in capsys.readouterr().out


def test_cdf_csv_layout(tmp_path):
    doc = {"model": _model(), "analysis": {"time_grid": {"start": 0.1, "stop": 2.0, "num": 5}}}
    assert _run(tmp_path, doc, "metrics") == 0
    raw = (tmp_path / "out" / "cdf.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["t", "cdf", "cdf_upper", "cdf_lower", "atom"]
    assert len(rows) == 6
    cdf = [float(r[1]) for r in rows[1:]]
    assert cdf == sorted(cdf) and all(r[4] == "0" for r in rows[1:])


def test_atom_rows_flagged(tmp_path):
    model = {"x0": 0.0, "stages": [
        {"t_start": 0.0, "drift": 0.3, "diffusion": 1.0, "z_upper": 2.0},
        {"t_start": 0.8, "drift": 0.3, "diffusion": 1.0, "z_upper": 1.2}]}
    doc = {"model": model, "analysis": {"time_grid": [0.5, 1.0, 3.0]}}
    assert _run(tmp_path, doc, "metrics") == 0
    rows = list(csv.DictReader((tmp_path / "out" / "cdf.csv").read_text().splitlines()))
    assert [r["t"] for r in rows] == ["0.5", "0.80000000000000004", "1", "3"]
    assert [r["atom"] for r in rows] == ["0", "1", "0", "0"]
    meta = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert {a["boundary"] for a in meta["atoms"]} == {"upper", "lower"}


def test_reruns_are_byte_identical(tmp_path):
    doc = {"model": _model(), "simulation": {"n_paths": 500, "dt": 1e-3, "seed": 3}}
    for sub in ("a", "b"):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / sub)]) == 0
    for name in ("outcomes.csv", "simulation.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_outcomes(tmp_path):
    doc = {"model": _model(), "simulation": {"n_paths": 200, "dt": 1e-3, "seed": 3}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "outcomes.csv").read_bytes() != (tmp_path / "b" / "outcomes.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "simulation.json").read_text())["simulation"]["seed"] == 4


def test_compare_small(tmp_path):
    doc = {"model": _model(), "simulation": {"n_paths": 4000, "dt": 1e-4, "seed": 1}}
    assert _run(tmp_path, doc, "compare") == 0
    res = json.loads((tmp_path / "out" / "compare.json").read_text())
    assert res["pass"] is True
    assert res["ks"]["cdf"]["statistic"] < res["ks"]["cdf"]["threshold"]
    assert abs(res["metrics"]["er"]["z"]) < 4


def test_reward_outputs(tmp_path):
    doc = {"model": {"x0": 0.0, "stages": [{"t_start": 0.0, "drift": 0.5, "diffusion": 0.1}]},
           "reward": {"resolution": 100}}
    assert _run(tmp_path, doc, "reward") == 0
    res = json.loads((tmp_path / "out" / "reward.json").read_text())
    assert res["n_local_maxima"] == 1 and res["z_star"] == pytest.approx(0.026, abs=1e-3)
    lines = (tmp_path / "out" / "reward_curve.csv").read_text().splitlines()
    assert lines[0] == "z,rr" and len(lines) == 101


def test_surface_outputs(tmp_path):
    doc = {"model": {"x0": 0.0, "stages": [{"t_start": 0.0, "drift": 0.5, "diffusion": 0.1}]},
           "reward": {"resolution": 60},
           "surface": {"a1": [0.1, 0.5], "t1": [0.0, 0.2], "a2": 0.5, "sigma": 0.1}}
    assert _run(tmp_path, doc, "surface", "--grid", "64") == 0
    matrix = (tmp_path / "out" / "surface_matrix.csv").read_text().splitlines()
    assert matrix[0] == "a1\\t1,0,0.20000000000000001" and len(matrix) == 3
    assert json.loads((tmp_path / "out" / "surface.json").read_text())["failed_cells"] == []


def test_ou_command(tmp_path):
    doc = {"model": _model(leak=0.5, drift=0.5, z_upper=2.0), "analysis": {"pieces": 4}}
    assert _run(tmp_path, doc, "ou") == 0
    res = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert res["pieces"] == 4 and 0 < res["overall_er"] < 0.5


def test_metrics_rejects_leak(tmp_path, capsys):
    assert _run(tmp_path, {"model": _model(leak=0.5)}, "metrics") == 2
    assert "leak" in capsys.readouterr().err


@pytest.mark.parametrize("doc, field", [
    ({"model": {"x0": 0.0, "stages": [
        {"t_start": 0.0, "drift": 1.0, "diffusion": 1.0, "z_upper": 1.0},
        {"t_start": -1.0, "drift": 1.0, "diffusion": 1.0, "z_upper": 1.0}]}}, "model.stages[1].t_start"),
    ({"model": _model(), "reward": {"z_min": 0.3, "z_max": 0.2}}, "reward.z_max"),
    ({"model": _model(), "bogus": 1}, "bogus"),
    ({"model": _model(diffusion=0.0)}, "diffusion"),
    ({"model": _model(t_start="soon")}, "t_start"),
    ({"model": dict(_model(), x0=2.0)}, "model.x0"),
])
def test_invalid_configs_exit_2(tmp_path, capsys, doc, field):
    assert _run(tmp_path, doc, "metrics") == 2
    err = capsys.readouterr().err
    assert "config error" in err and field in err
    assert not (tmp_path / "out").exists()


def test_malformed_json_reports_position(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text('{"model": {"x0": 0.0,,}}')
    assert main(["metrics", "--config", str(path)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_missing_config_flag(capsys):
    assert main(["metrics"]) == 2
    assert "--config" in capsys.readouterr().err


def test_random_start_times_are_reproducible():
    raw = {"model": {"x0": 0.0,
                     "stages": [{"drift": 1.0, "diffusion": 1.0, "z_upper": 1.0}] * 4,
                     "random_start_times": {"seed": 2, "low": 0.0, "high": 10.0}}}
    a, b = parse_config(raw), parse_config(raw)
    assert a.start_times == b.start_times and a.start_times[0] == 0.0
    assert list(a.start_times) == sorted(a.start_times) and len(a.start_times) == 4
    assert all(round(t, 3) == t for t in a.start_times)
    spec = a.model_spec()
    assert [s.start_time for s in spec.stages] == list(a.start_times)


def test_random_start_times_conflict_with_explicit_ones():
    raw = {"model": {"x0": 0.0,
                     "stages": [{"drift": 1.0, "diffusion": 1.0, "z_upper": 1.0},
                                {"t_start": 1.0, "drift": 1.0, "diffusion": 1.0, "z_upper": 1.0}],
                     "random_start_times": {"seed": 2, "low": 0.0, "high": 10.0}}}
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_format_filter(tmp_path):
    doc = {"model": _model(), "output": {"formats": ["json"]}}
    assert _run(tmp_path, doc, "metrics") == 0
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["metrics.json"]


def test_json_nonfinite_becomes_null():
    text = to_json_text({"a": math.nan, "b": [1.0, math.inf]})
    assert json.loads(text) == {"a": None, "b": [1.0, None]}
