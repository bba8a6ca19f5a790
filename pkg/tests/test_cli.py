import copy
import json

import numpy as np
import pytest

from conftest import load_raw
from hfc.cli import main
from hfc.config import ConfigErrors, apply_seed_override, parse_config
from hfc.simkit import TimeSeriesRecord


def _write(tmp_path, raw, name="sc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def _short(name="strategy_study", duration=30.0):
    raw = copy.deepcopy(load_raw(name))
    raw["duration"] = duration
    return raw


# --- validation -------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["benchmark_a", "benchmark_b", "counteraction", "delay_study",
                                  "strategy_study"])
def test_shipped_scenarios_validate(name):
    parse_config(load_raw(name))


def _errors(raw):
    with pytest.raises(ConfigErrors) as info:
        parse_config(raw)
    return info.value.errors


def test_reserves_beyond_headroom():
    raw = _short()
    raw["plants"][0]["bundle"]["p_ref"] = 0.15
    raw["plants"][0]["bundle"]["reserves_up"] = [0.0, 0.2, 0.0]
    errs = _errors(raw)
    assert any(e.path == "plants[0].bundle.reserves_up" for e in errs)


def test_delay_out_of_range():
    raw = _short()
    raw["delays"] = {"plant_to_asset": {"t_max": 5.0}}
    errs = _errors(raw)
    assert any("[0.0, 2.0]" in str(e) for e in errs)


def test_all_errors_reported_at_once():
    raw = _short()
    raw["dt"] = -1.0
    raw["delays"] = {"plant_to_asset": {"t_max": 5.0}}
    raw["mode"] = "sideways"
    assert len(_errors(raw)) >= 3


def test_centralized_needs_hpp():
    raw = _short()
    raw["mode"] = "centralized"
    errs = _errors(raw)
    assert any(e.path == "hpp.enabled" for e in errs)


def test_defaults_materialised():
    sc = parse_config(_short())
    d = sc.to_dict()
    assert d["schema_version"] == 1
    assert d["design"]["omega_noise"] == 50.0
    assert d["noise"]["amplitude"] == 0.002


def test_seed_override():
    raw = apply_seed_override(_short(), "77")
    assert raw["seed"] == 77 and raw["noise"]["seed"] == 77
    assert apply_seed_override(_short(), None) == _short()


# --- exit codes ----------------------------------------------------------------------------


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", _write(tmp_path, _short()), "-o", str(out)]) == 0
    rec = TimeSeriesRecord.from_csv(out / "timeseries.csv")
    assert rec.names[:3] == ["t_s", "f_hz", "p_hpp_pu"]
    assert "rise_time = " in (out / "metrics.txt").read_text()
    assert json.loads((out / "config.json").read_text())["schema_version"] == 1
    assert list(out.glob("*.svg"))


def test_invalid_config_exit_2_without_outputs(tmp_path, capsys):
    raw = _short()
    raw["delays"] = {"plant_to_asset": {"t_max": 5.0}}
    out = tmp_path / "out"
    assert main(["simulate", _write(tmp_path, raw), "-o", str(out)]) == 2
    assert not out.exists()
    assert "invalid config" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.json"), "-o", str(tmp_path / "o")]) == 2


def test_malformed_json_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["simulate", str(p), "-o", str(tmp_path / "o")]) == 2


def test_divergence_exit_3(tmp_path, capsys):
    raw = copy.deepcopy(load_raw("divergent"))
    assert main(["simulate", _write(tmp_path, raw), "-o", str(tmp_path / "o")]) == 3
    assert "diverged" in capsys.readouterr().err


def test_infeasible_filter_exit_5(tmp_path, capsys):
    raw = copy.deepcopy(load_raw("infeasible_filter"))
    assert main(["design", _write(tmp_path, raw), "-o", str(tmp_path / "o")]) == 5
    assert "noise band" in capsys.readouterr().err
    assert main(["simulate", _write(tmp_path, raw), "-o", str(tmp_path / "o2")]) == 5


def test_sweep_with_failed_run_exit_4(tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", _write(tmp_path, _short(duration=25.0)), "--over", "mode=distributed,centralized",
                 "-o", str(out)])
    assert code == 4
    rows = (out / "report.csv").read_text().splitlines()
    assert len(rows) == 3
    assert "ValidationError" in rows[2]


def test_sweep_bad_dimension_exit_2(tmp_path):
    assert main(["sweep", _write(tmp_path, _short()), "--over", "colour=red", "-o", str(tmp_path / "o")]) == 2


def test_report_rerenders(tmp_path, capsys):
    out = tmp_path / "sw"
    main(["sweep", _write(tmp_path, _short(duration=25.0)), "--over", "delay=0,0.1", "-o", str(out)])
    for svg in out.glob("*.svg"):
        svg.unlink()
    assert main(["report", str(out)]) == 0
    assert list(out.glob("*.svg"))
    assert main(["report", str(tmp_path / "missing")]) == 2


# --- design round trip and reproducibility ------------------------------------------------------


def test_design_fragment_round_trip(tmp_path):
    raw = _short()
    out = tmp_path / "d"
    assert main(["design", _write(tmp_path, raw), "-o", str(out)]) == 0
    frag = json.loads((out / "design.json").read_text())
    assert frag["design"]["plants"]["ess"]["q_n"] == 3
    text = (out / "design.txt").read_text()
    assert "robust_delay_satisfied = True" in text and "robust_params_satisfied = True" in text
    assert (out / "bode_pdy_ess.csv").exists() and (out / "robust_delay_ess.csv").exists()
    merged = copy.deepcopy(raw)
    merged["design"] = {**merged.get("design", {}), **frag["design"]}
    assert main(["simulate", _write(tmp_path, merged, "merged.json"), "-o", str(tmp_path / "s")]) == 0
    plain = tmp_path / "plain"
    main(["simulate", _write(tmp_path, raw, "plain.json"), "-o", str(plain)])
    assert (tmp_path / "s" / "timeseries.csv").read_bytes() == (plain / "timeseries.csv").read_bytes()


def test_design_benchmark_includes_hpp(tmp_path):
    out = tmp_path / "d"
    assert main(["design", _write(tmp_path, load_raw("benchmark_a")), "-o", str(out)]) == 0
    frag = json.loads((out / "design.json").read_text())
    assert set(frag["design"]["plants"]) == {"wpp", "spp", "ess"}
    assert frag["design"]["hpp"]["kp"] > 0
    assert (out / "robust_delay_hpp.csv").exists()


def test_run_ending_before_event(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", _write(tmp_path, _short(duration=5.0)), "-o", str(out)]) == 0
    assert "past the end of the run" in (out / "metrics.txt").read_text()


def test_simulate_bytes_reproducible(tmp_path):
    cfg = _write(tmp_path, _short(duration=20.0))
    main(["simulate", cfg, "-o", str(tmp_path / "a")])
    main(["simulate", cfg, "-o", str(tmp_path / "b")])
    assert (tmp_path / "a" / "timeseries.csv").read_bytes() == (tmp_path / "b" / "timeseries.csv").read_bytes()


def test_hfc_seed_env(tmp_path, monkeypatch):
    cfg = _write(tmp_path, _short(duration=5.0))
    monkeypatch.setenv("HFC_SEED", "123")
    main(["simulate", cfg, "-o", str(tmp_path / "a")])
    echo = json.loads((tmp_path / "a" / "config.json").read_text())
    assert echo["noise"]["seed"] == 123
    monkeypatch.setenv("HFC_SEED", "124")
    main(["simulate", cfg, "-o", str(tmp_path / "b")])
    a = np.loadtxt(tmp_path / "a" / "timeseries.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "b" / "timeseries.csv", delimiter=",", skiprows=1)
    assert not np.array_equal(a, b)


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = _write(tmp_path, _short(duration=25.0))
    over = ["--over", "delay=0,1", "--over", "strategy=FROB,NoCoordination"]
    assert main(["sweep", cfg, *over, "-o", str(tmp_path / "s1"), "-j", "1"]) == 0
    assert main(["sweep", cfg, *over, "-o", str(tmp_path / "s2"), "-j", "2"]) == 0
    assert (tmp_path / "s1" / "report.csv").read_bytes() == (tmp_path / "s2" / "report.csv").read_bytes()
    for i in range(4):
        run_id = f"run{i:03d}"
        assert ((tmp_path / "s1" / run_id / "timeseries.csv").read_bytes()
                == (tmp_path / "s2" / run_id / "timeseries.csv").read_bytes())
