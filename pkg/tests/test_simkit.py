import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scenario
from hfc.config import DelayProfile
from hfc.errors import BufferUnderrun, ChannelMissing, NoResponse, NoSteadyState
from hfc.simkit import (
    DelayLine,
    NoiseSource,
    TimeSeriesRecord,
    delay_read,
    make_link,
    metrics,
    relative_rms,
    run,
)

DT = 0.01


def _line(t_max, initial=0.0, profile="constant", t_min=0.0):
    return DelayLine(DT, DelayProfile(profile, t_min, t_max), initial)


def _drive(dl, signal, t_end):
    out = []
    for k in range(int(round(t_end / DT))):
        t = k * DT
        dl.write(t, signal(t))
        out.append(delay_read(dl, t))
    return np.array(out)


# --- delay lines ------------------------------------------------------------------------


def test_zero_delay_passes_current_input():
    dl = _line(0.0)
    out = _drive(dl, lambda t: math.sin(t), 5.0)
    assert np.array_equal(out, np.sin(DT * np.arange(500)))


def test_zero_delay_link_is_a_hold():
    link = make_link(DT, DelayProfile("constant", 0.0, 0.0), 0.3)
    assert link.read(0.0) == 0.3
    link.write(0.0, 0.7)
    assert link.read(0.0) == 0.7


@pytest.mark.parametrize("profile", ["constant", "sinusoidal"])
def test_constant_input_is_unchanged(profile):
    dl = _line(2.0, initial=0.4, profile=profile, t_min=0.5)
    out = _drive(dl, lambda t: 0.4, 30.0)
    assert np.all(out == 0.4)


def test_step_arrives_after_delay():
    dl = _line(2.0)
    out = _drive(dl, lambda t: 1.0 if t >= 10.0 else 0.0, 20.0)
    t = DT * np.arange(len(out))
    first = t[np.argmax(out > 0.5)]
    assert abs(first - 12.0) <= DT + 1e-9


def test_buffer_underrun():
    dl = _line(1.0)
    for k in range(500):
        dl.write(k * DT, 1.0)
    with pytest.raises(BufferUnderrun):
        dl.read(4.99, delay=3.0)


def test_sinusoidal_profile_stays_in_range():
    p = DelayProfile("sinusoidal", 0.5, 2.0)
    vals = [p.value(t) for t in np.linspace(0, 200, 2001)]
    assert min(vals) >= 0.5 - 1e-12 and max(vals) <= 2.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=20, max_size=200), st.integers(0, 19), st.floats(0.0, 1.0))
def test_delay_causality(values, cut, t_max):
    # changing inputs after step `cut` must not change outputs up to `cut`
    a = _line(t_max)
    b = _line(t_max)
    alt = list(values[: cut + 1]) + [v + 1.0 for v in values[cut + 1:]]
    out_a, out_b = [], []
    for k, (va, vb) in enumerate(zip(values, alt)):
        t = k * DT
        a.write(t, va)
        b.write(t, vb)
        out_a.append(a.read(t))
        out_b.append(b.read(t))
    assert out_a[: cut + 1] == out_b[: cut + 1]


def test_read_time_never_moves_backwards():
    dl = _line(2.0, profile="sinusoidal", t_min=0.0)
    dl.profile.period = 1.0  # delay falls faster than time advances on part of each cycle
    reads = []
    for k in range(1000):
        t = k * DT
        dl.write(t, t)
        reads.append(dl.read(t))
    assert np.all(np.diff(reads) >= -1e-12)


# --- noise --------------------------------------------------------------------------------


def test_noise_reproducible():
    a = NoiseSource(42, 0.002, 50.0, 0.001).take(5000)
    b = NoiseSource(42, 0.002, 50.0, 0.001).take(5000)
    c = NoiseSource(43, 0.002, 50.0, 0.001).take(5000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_amplitude_is_std():
    x = NoiseSource(1, 0.002, 50.0, 0.001).take(200000)
    assert np.std(x) == pytest.approx(0.002, rel=0.05)


def test_zero_noise():
    assert np.all(NoiseSource(1, 0.0, 50.0, 0.001).take(100) == 0.0)


def test_negative_noise_amplitude():
    with pytest.raises(ValueError):
        NoiseSource(1, -1.0, 50.0, 0.001)


# --- records ---------------------------------------------------------------------------------


def test_record_csv_round_trip(tmp_path):
    t = np.arange(5) * 0.1
    rec = TimeSeriesRecord({"t_s": t, "f_hz": 50.0 + 0.01 * t, "p_hpp_pu": np.sqrt(t)})
    rec.to_csv(tmp_path / "r.csv")
    back = TimeSeriesRecord.from_csv(tmp_path / "r.csv")
    assert back.names == rec.names
    for n in rec.names:
        assert np.allclose(back[n], rec[n], rtol=1e-9, atol=0)


def test_record_invariants():
    with pytest.raises(ValueError):
        TimeSeriesRecord({"t_s": [0.0, 1.0], "x": [1.0]})
    with pytest.raises(ValueError):
        TimeSeriesRecord({"t_s": [0.0, 0.0], "x": [1.0, 2.0]})
    with pytest.raises(ChannelMissing):
        TimeSeriesRecord({"t_s": [0.0]})["nope"]


# --- metrics --------------------------------------------------------------------------------


def _first_order(tau, dt=0.001, t_end=20.0, event=2.0):
    t = np.arange(0.0, t_end, dt)
    x = np.where(t >= event, 1.0 - np.exp(-(t - event) / tau), 0.0)
    return TimeSeriesRecord({"t_s": t, "x": x, "f_hz": np.full_like(t, 50.0)})


@pytest.mark.parametrize("tau", [0.1, 0.5, 1.5])
def test_rise_time_of_first_order(tau):
    m = metrics(_first_order(tau), 2.0, "x")
    assert m.rise_time == pytest.approx(math.log(9) * tau, abs=2 * 0.001)
    assert m.overshoot_pct < 0.01


def test_flat_channel_has_no_response():
    t = np.arange(0.0, 10.0, 0.01)
    rec = TimeSeriesRecord({"t_s": t, "x": np.ones_like(t)})
    with pytest.raises(NoResponse):
        metrics(rec, 2.0, "x")


def test_oscillating_tail_is_not_steady():
    t = np.arange(0.0, 40.0, 0.01)
    x = np.where(t >= 2.0, 1.0 + 0.5 * np.sin(0.3 * t), 0.0)
    with pytest.raises(NoSteadyState):
        metrics(TimeSeriesRecord({"t_s": t, "x": x}), 2.0, "x")


def test_missing_channel():
    with pytest.raises(ChannelMissing):
        metrics(_first_order(0.5), 2.0, "p_nothing")


def test_relative_rms_of_identical_records_is_zero():
    rec = _first_order(0.5)
    assert relative_rms(rec, rec, "x", 2.0, 10.0) == 0.0


# --- full runs --------------------------------------------------------------------------------


def _short(raw, duration=40.0, noise=True):
    raw["duration"] = duration
    if not noise:
        raw["noise"]["amplitude"] = 0.0


def test_null_scenario_is_flat():
    def edit(raw):
        _short(raw, 20.0, noise=False)
        raw["events"] = []
    rec = run(scenario("strategy_study", edit))
    # constant up to floating point rounding in the filter fixed point
    assert np.max(np.abs(rec["f_hz"] - 50.0)) < 1e-9
    for n in rec.names:
        if n.startswith("p_") and n.endswith("_pu"):
            col = np.asarray(rec[n])
            assert np.ptp(col) < 1e-9, n


def test_runs_are_deterministic():
    sc = scenario("strategy_study", lambda raw: _short(raw, 30.0))
    a, b = run(sc), run(sc)
    assert a.names == b.names
    for n in a.names:
        assert np.array_equal(a[n], b[n])


def test_seed_changes_noise():
    a = run(scenario("strategy_study", lambda raw: _short(raw, 5.0)))

    def reseed(raw):
        _short(raw, 5.0)
        raw["noise"]["seed"] = 1234
    b = run(scenario("strategy_study", reseed))
    assert not np.array_equal(a["p_ess_pu"], b["p_ess_pu"])


def test_asset_order_does_not_change_plant_total():
    def assets(order):
        def edit(raw):
            _short(raw, 40.0)
            pairs = [{"rating": 0.05, "count": 2}, {"rating": 0.1}]
            raw["plants"][0]["assets"] = pairs if order == 0 else pairs[::-1]
        return edit
    a = run(scenario("strategy_study", assets(0)))
    b = run(scenario("strategy_study", assets(1)))
    assert np.max(np.abs(a["p_ess_pu"] - b["p_ess_pu"])) <= 1e-12


def test_fc_response_of_short_run():
    rec = run(scenario("strategy_study", lambda raw: _short(raw, 60.0, noise=False)))
    m = metrics(rec, 20.0, "p_fc_poc_pu")
    assert m.steady_change > 0
    assert m.nadir_hz < 50.0 - 0.1
    assert 0 < m.rise_time < 5.0
