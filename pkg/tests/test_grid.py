import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfc.assets import AssetParams, FcSettings, asset_step, make_asset
from hfc.errors import NonFiniteInput, UnsortedSchedule
from hfc.grid import GridEvent, GridParams, GridState, apply_events, grid_step, swing_residual

DT = 0.005


def _run_grid(params, schedule, t_end, settings_fc=None, dt=DT):
    """Grid with an optional single ES asset standing in for the HPP (hpp_share of system base)."""
    state = GridState(params)
    asset = None
    if settings_fc is not None:
        asset = make_asset(AssetParams(), settings_fc, dt, p_ref=0.0)
    f = params.f_nom
    out = []
    for k in range(int(round(t_end / dt))):
        t = k * dt
        apply_events(schedule, t, state)
        p_hpp = 0.0
        if asset is not None:
            y, _ = asset_step(asset, 0.0, f, settings_fc, t, params.f_nom)
            p_hpp = params.hpp_share * y
        f = grid_step(state, p_hpp, dt)
        out.append(f)
    return np.array(out), state


def test_equilibrium_without_events():
    f, _ = _run_grid(GridParams(), [], 20.0)
    assert np.all(f == 50.0)


def test_steady_deviation_matches_droop_formula():
    p = GridParams()
    f, _ = _run_grid(p, [GridEvent(1.0, "load_step", 0.08)], 60.0)
    df = f[-1] / p.f_nom - 1.0
    assert df == pytest.approx(-0.08 / (1 / p.r_sys + p.d_load), rel=1e-4)
    assert df == pytest.approx(p.steady_deviation(0.08), rel=1e-4)


def test_agc_restores_nominal():
    p = GridParams(k_agc=1.0)
    sched = [GridEvent(1.0, "load_step", 0.08), GridEvent(30.0, "agc_on")]
    f, state = _run_grid(p, sched, 200.0)
    assert state.agc_on
    assert abs(f[int(29.0 / DT)] - 50.0) > 0.1
    assert abs(f[-1] - 50.0) < 1e-3


def test_events_fire_once():
    p = GridParams()
    sched = [GridEvent(150.0, "load_step", 0.08), GridEvent(400.0, "frr_dispatch", 0.02)]
    state = GridState(p)
    apply_events(sched, 149.999, state)
    assert state.p_load == 0.0
    apply_events(sched, 150.0, state)
    apply_events(sched, 150.001, state)
    assert state.p_load == 0.08
    apply_events(sched, 500.0, state)
    apply_events(sched, 501.0, state)
    assert state.p_frr_set == 0.02
    assert len(state.fired) == 2


def test_empty_schedule_is_noop():
    state = GridState(GridParams())
    apply_events([], 10.0, state)
    assert state.p_load == 0.0 and state.fired == []


def test_unsorted_schedule():
    sched = [GridEvent(5.0, "load_step", 0.1), GridEvent(1.0, "agc_on")]
    with pytest.raises(UnsortedSchedule):
        apply_events(sched, 0.0, GridState(GridParams()))


def test_non_finite_power():
    with pytest.raises(NonFiniteInput):
        grid_step(GridState(GridParams()), float("inf"), DT)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=1, max_size=50), st.floats(-0.1, 0.1))
def test_swing_bookkeeping(powers, load):
    p = GridParams()
    state = GridState(p, p_load=load)
    for ph in powers:
        before = state.df
        rhs = swing_residual(state, ph)
        grid_step(state, ph, DT)
        assert 2 * p.h * (state.df - before) / DT == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_nadir_after_step_and_before_steady_state():
    f, _ = _run_grid(GridParams(), [GridEvent(1.0, "load_step", 0.08)], 60.0)
    k = int(np.argmin(f))
    assert 1.0 < k * DT < 20.0
    assert f[k] < f[-1]


def _ffr_settings(level):
    return FcSettings(t_ffr=(1.0, 10.0, 2.0), reserves_up=(level, 0.0, 0.0), reserves_down=(level, 0.0, 0.0))


def test_nadir_improves_with_ffr_reserve():
    nadirs = []
    for level in (0.0, 0.025, 0.05):
        f, _ = _run_grid(GridParams(), [GridEvent(1.0, "load_step", 0.08)], 30.0, _ffr_settings(level))
        nadirs.append(f.min())
    assert nadirs[0] < nadirs[1] < nadirs[2]


def test_fcr_reduces_steady_deviation_by_droop_share():
    p = GridParams()
    sched = [GridEvent(1.0, "load_step", 0.08)]
    fcr = FcSettings(db_fcr=0.0, r_fcr=0.04, reserves_up=(0.0, 0.5, 0.0), reserves_down=(0.0, 0.5, 0.0))
    f_off, _ = _run_grid(p, sched, 80.0)
    f_on, _ = _run_grid(p, sched, 80.0, fcr)
    dev_off = f_off[-1] / p.f_nom - 1
    dev_on = f_on[-1] / p.f_nom - 1
    assert abs(dev_on) < abs(dev_off)
    expected = p.steady_deviation(0.08, extra_gain=p.hpp_share / fcr.r_fcr)
    assert dev_on == pytest.approx(expected, rel=0.05)


def test_fcr_with_deadband_steady_deviation():
    # the soft deadband withholds share*db/r of droop power: df = -(L + share*db/r) / (1/r_sys + D + share/r)
    p = GridParams()
    fcr = FcSettings(db_fcr=0.1, r_fcr=0.04, reserves_up=(0.0, 0.5, 0.0), reserves_down=(0.0, 0.5, 0.0))
    f_on, _ = _run_grid(p, [GridEvent(1.0, "load_step", 0.08)], 80.0, fcr)
    db = fcr.db_fcr / p.f_nom
    k = 1 / p.r_sys + p.d_load + p.hpp_share / fcr.r_fcr
    expected = -(0.08 + p.hpp_share * db / fcr.r_fcr) / k
    assert f_on[-1] / p.f_nom - 1 == pytest.approx(expected, rel=0.05)
