import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfc.analysis import frob_closed_loops
from hfc.assets import AssetParams, FcSettings, asset_step, build_asset_dynamics, fcr_droop, make_asset
from hfc.design import design_loop
from hfc.errors import NonFiniteInput
from hfc.hierarchy import (
    HppController,
    MisoFrob,
    PlantController,
    SetpointBundle,
    Strategy2Estimator,
    asset_settings,
    build_hpp_nominal,
    centralized_step,
    dispatch,
    frob_step,
    hpp_step,
    make_frob,
    plant_step,
    strategy2_estimate,
)
from hfc.lti import TransferFunction, tf_discretize, tf_eval

DT = 0.001
F_NOM = 50.0
G = build_asset_dynamics(AssetParams())
LOOP = design_loop(G, 0.25, 150.0, 50.0, 1.0)
FC = FcSettings(t_ffr=(1.0, 5.0, 2.0), reserves_up=(0.05, 0.05, 0.0), reserves_down=(0.05, 0.05, 0.0))
FCR_ONLY = FcSettings(reserves_up=(0.0, 0.05, 0.0), reserves_down=(0.0, 0.05, 0.0))


def _plant(strategy, freq, y_r, t_end, s=FCR_ONLY, y0=0.5, dt=DT):
    """One plant with a single ES asset; returns arrays t, y (PoC), p_fc, estimate."""
    asset = make_asset(AssetParams(), s, dt, p_ref=y0)
    frob = make_frob(G, LOOP.q, dt) if strategy == "FROB" else None
    est = None
    if strategy == "Feedforward":
        est = Strategy2Estimator([1.0], [s], tf_discretize(G, dt), F_NOM)
    pc = PlantController(LOOP.kp, LOOP.ki, 0.0, [1.0], [1.0], [-1.0], [1.0], strategy, frob, est)
    pc.initialize(y0)
    y = y0
    n = int(round(t_end / dt))
    out = np.empty((n, 4))
    for k in range(n):
        t = k * dt
        f = freq(t)
        refs = plant_step(pc, y_r(t), y, dt, t, f)
        y, p_fc = asset_step(asset, refs[0], f, s, t)
        pc.saturated = [asset.saturated]
        out[k] = (t, y, p_fc, pc.estimate)
    return out


def _dip(t):
    return 49.7 if t >= 1.0 else F_NOM


def _flat(t):
    return F_NOM


def _const(v):
    return lambda t: v


# --- FROB ------------------------------------------------------------------------------


def test_frob_zero_disturbance():
    out = _plant("FROB", _flat, lambda t: 0.5 if t < 1.0 else 0.6, 10.0)
    assert np.max(np.abs(out[:, 3])) < 1e-9


def test_frob_recovers_constant_injection():
    out = _plant("FROB", _dip, _const(0.5), 20.0)
    dp = fcr_droop(-0.3, FCR_ONLY, F_NOM)
    settle = int((1.0 + 10.0 + 3.0 / LOOP.q_omega_c) / DT)
    assert np.all(np.abs(out[settle:, 3] - dp) <= 0.02 * dp)


@pytest.mark.parametrize("w", [50.0, 2000.0])
def test_frob_noise_attenuation(w):
    dt = 1e-4
    fr = make_frob(G, LOOP.q, dt)
    fr.reset(0.5)
    g_f = tf_discretize(G, dt)
    g_f.reset(0.5)
    n = int(2.0 / dt)
    t = dt * np.arange(n)
    noise = 1e-3 * np.sin(w * t)
    est = np.array([frob_step(fr, 0.5, g_f.step_unchecked(0.5) + x) for x in noise])
    tail = slice(n // 2, n)
    ratio = np.std(est[tail]) / np.std(noise[tail])
    q_mag = abs(tf_eval(LOOP.q.tf, w))
    assert ratio == pytest.approx(q_mag, rel=0.05)


def test_frob_rejects_non_finite():
    fr = make_frob(G, LOOP.q, DT)
    with pytest.raises(NonFiniteInput):
        frob_step(fr, 0.0, math.nan)


# --- plant controller -----------------------------------------------------------------


def test_frob_keeps_fc_at_steady_state():
    out = _plant("FROB", _dip, _const(0.5), 60.0)
    dp = out[-1, 2]
    assert dp > 0
    assert out[-1, 1] - 0.5 == pytest.approx(dp, rel=0.01)


def test_no_coordination_counteracts():
    out = _plant("NoCoordination", _dip, _const(0.5), 60.0)
    dp = out[-1, 2]
    assert dp > 0
    assert abs(out[-1, 1] - 0.5) <= 0.01 * dp


def test_open_loop_keeps_fc():
    out = _plant("OpenLoop", _dip, _const(0.5), 30.0)
    assert out[-1, 1] - 0.5 == pytest.approx(out[-1, 2], rel=0.01)


def test_frob_neutral_to_tracking():
    ref = lambda t: 0.5 if t < 1.0 else 0.6
    a = _plant("FROB", _flat, ref, 20.0)
    b = _plant("NoCoordination", _flat, ref, 20.0)
    assert np.max(np.abs(a[:, 1] - b[:, 1])) <= 0.01 * 0.1


def test_feedforward_matches_frob_when_healthy():
    a = _plant("FROB", _dip, _const(0.5), 20.0, s=FC)
    b = _plant("Feedforward", _dip, _const(0.5), 20.0, s=FC)
    fc = a[:, 2]
    rms = math.sqrt(np.mean((b[:, 3] - a[:, 3]) ** 2))
    assert rms <= 0.05 * np.max(np.abs(fc))
    assert a[-1, 1] == pytest.approx(b[-1, 1], rel=1e-3)


def test_plant_step_rejects_non_finite():
    pc = PlantController(1.0, 1.0, 0.0, [1.0], [1.0], [-1.0], [1.0], "NoCoordination")
    with pytest.raises(NonFiniteInput):
        plant_step(pc, math.inf, 0.0, DT)


def test_unknown_strategy():
    with pytest.raises(ValueError):
        PlantController(1.0, 1.0, 0.0, [1.0], [1.0], [-1.0], [1.0], "Magic")


# --- strategy #2 -----------------------------------------------------------------------


def test_strategy2_inside_deadband():
    assert strategy2_estimate(49.95, FC, 4) == 0.0


def test_strategy2_overestimates_with_half_malfunctioning():
    # two assets assumed, one actually responds
    actual = fcr_droop(-0.3, FC, F_NOM)
    assert strategy2_estimate(49.7, FC, 2) == pytest.approx(2 * actual)


def test_strategy2_includes_ffr_shape():
    r, d, fl = FC.t_ffr
    est = strategy2_estimate(49.7, FC, 1, elapsed=r + 0.5 * d)
    assert est == pytest.approx(FC.reserves_up[0] + fcr_droop(-0.3, FC, F_NOM))


# --- dispatch -------------------------------------------------------------------------

weights_st = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6).map(lambda w: [x / sum(w) for x in w])


@settings(max_examples=500, deadline=None)
@given(weights_st, st.floats(-1.0, 1.0))
def test_dispatch_conserves_without_saturation(w, u):
    out = dispatch(u, w, [-10.0] * len(w), [10.0] * len(w))
    assert out == [x * u for x in w]
    assert sum(out) == pytest.approx(u, rel=1e-12, abs=1e-15)


@settings(max_examples=500, deadline=None)
@given(weights_st, st.floats(0.0, 1.0), st.data())
def test_dispatch_water_fills(w, u, data):
    hi = [data.draw(st.floats(0.0, 1.0)) for _ in w]
    lo = [0.0] * len(w)
    out = dispatch(u, w, lo, hi)
    for o, h in zip(out, hi):
        assert -1e-12 <= o <= h + 1e-12
    if u <= sum(hi):
        assert sum(out) == pytest.approx(u, abs=1e-9)
    else:
        assert out == pytest.approx(hi)


def test_dispatch_redistributes_excess():
    out = dispatch(1.0, [0.5, 0.5], [0.0, 0.0], [0.2, 1.0])
    assert out == pytest.approx([0.2, 0.8])


def test_asset_settings_scale_reserves():
    b = SetpointBundle(0.3, (0.02, 0.04, 0.0), (0.0, 0.04, 0.0))
    s = asset_settings(b, 2.0)
    assert s.reserves_up == pytest.approx((0.04, 0.08, 0.0))
    assert s.db_fcr == b.db_fcr and s.t_ffr == b.t_ffr


# --- HPP level ---------------------------------------------------------------------------

G_YRY = frob_closed_loops(LOOP.c_p, G, G, LOOP.q, TransferFunction.gain(1.0), G).g_yry


def _miso_step(models, us, n, dt=0.01):
    m = build_hpp_nominal(models, dt)
    m.reset([0.0] * len(models))
    return np.array([m.step(us) for _ in range(n)])


def test_miso_single_branch_equals_siso():
    a = _miso_step([G_YRY], [1.0], 500)
    f = tf_discretize(G_YRY, 0.01)
    b = np.array([f.step_unchecked(1.0) for _ in range(500)])
    assert np.array_equal(a, b)


def test_miso_linearity():
    one = _miso_step([G_YRY], [0.3], 500)
    two = _miso_step([G_YRY, G_YRY], [0.3, 0.3], 500)
    assert np.allclose(two, 2 * one, rtol=0, atol=1e-15)


def test_miso_matches_three_plant_loops():
    dt = 0.001
    us = [0.1, 0.2, 0.05]
    miso = _miso_step([G_YRY] * 3, us, 10000, dt)
    total = np.zeros(10000)
    for u in us:
        out = _plant("FROB", _flat, lambda t, u=u: u if t > 0 else 0.0, 10.0, y0=0.0)
        total += out[:, 1]
    # plant harness samples y one step after the command
    assert np.max(np.abs(total[1:] - miso[:-1])) <= 0.02 * sum(us)


def _hpp(mode="distributed", frob=None):
    hc = HppController(0.5, 2.0, [0.3, 0.3], [0.5, 0.5], [1.0, 0.0], frob, mode)
    if mode == "centralized":
        hc.fc_settings = FcSettings(reserves_up=(0.0, 0.05, 0.0), reserves_down=(0.0, 0.05, 0.0))
        hc.ffr_weights = [0.5, 0.5]
        hc.fcr_weights = [0.0, 1.0]
    hc.initialize()
    return hc


def _hpp_loop(hc, ref, t_end, frr=None, f=F_NOM, dt=0.01):
    lags = [tf_discretize(TransferFunction((1.0,), (1.0, 0.5)), dt) for _ in range(2)]
    for lag, b in zip(lags, hc.base_refs):
        lag.reset(b)
    y = sum(hc.base_refs)
    out = []
    for k in range(int(round(t_end / dt))):
        t = k * dt
        if frr is not None and t >= frr[0]:
            hc.p_frr_set = frr[1]
        if hc.mode == "centralized":
            us = centralized_step(hc, f, ref, y, dt, t)
        else:
            us = hpp_step(hc, ref, y, dt, t)
        y = sum(lag.step_unchecked(u) for lag, u in zip(lags, us))
        out.append((t, y, *us))
    return np.array(out)


def test_hpp_tracks_reference():
    out = _hpp_loop(_hpp(), 0.6, 60.0)
    assert out[-1, 1] == pytest.approx(0.6, rel=0.005)


def test_hpp_frr_step():
    out = _hpp_loop(_hpp(), 0.6, 120.0, frr=(40.0, 0.05))
    assert out[int(39.0 / 0.01), 1] == pytest.approx(0.6, rel=0.005)
    assert out[-1, 1] == pytest.approx(0.65, rel=0.005)
    # FRR rides on the plant with frr weight 1
    assert out[-1, 2] - out[int(39.0 / 0.01), 2] > out[-1, 3] - out[int(39.0 / 0.01), 3]


def test_hpp_with_miso_frob_tracks():
    lag = TransferFunction((1.0,), (1.0, 0.5))
    frob = MisoFrob(build_hpp_nominal([lag, lag], 0.01), tf_discretize(LOOP.q.tf, 0.01))
    out = _hpp_loop(_hpp(frob=frob), 0.6, 60.0)
    assert out[-1, 1] == pytest.approx(0.6, rel=0.005)
    assert abs(frob.last_estimate) < 1e-6


def test_centralized_inside_deadband_equals_distributed():
    a = _hpp_loop(_hpp(), 0.6, 20.0)
    b = _hpp_loop(_hpp("centralized"), 0.6, 20.0, f=49.95)
    assert np.array_equal(a, b)


def test_centralized_adds_fcr_command():
    hc = _hpp("centralized")
    us = centralized_step(hc, 49.7, 0.6, 0.6, 0.01)
    dp = fcr_droop(-0.3, hc.fc_settings, F_NOM)
    assert hc.fc_command == pytest.approx(dp)
    assert us[1] - hc.u_last[1] == pytest.approx(dp)
    assert us[0] == hc.u_last[0]


def test_centralized_step_needs_centralized_mode():
    with pytest.raises(ValueError):
        centralized_step(_hpp(), 50.0, 0.6, 0.6, 0.01)
