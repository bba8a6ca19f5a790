"""Asset dynamics (WT, PV, ES) and the asset-level frequency controller.

All asset powers are in pu of the asset rating. The command-to-output path
is the converter control chain: power PI closed on a unity plant, machine
side current lag, DC-link PI closed on an integrator, grid side current lag.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

from .errors import UnstableComposition
from .lti import TransferFunction, tf_discretize

FFR, FCR, FRR = 0, 1, 2

PARAM_RANGES = {
    "t_cc_msc": (0.001, 0.1),
    "kp_pc_msc": (0.05, 0.15),
    "ki_pc_msc": (5.0, 15.0),
    "t_cc_gsc": (0.001, 0.1),
    "kp_vc_gsc": (7.5, 22.5),
    "ki_vc_gsc": (75.0, 225.0),
}


def _mid(name):
    lo, hi = PARAM_RANGES[name]
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class AssetParams:
    kind: str = "ES"
    rating: float = 1.0
    t_cc_msc: float = _mid("t_cc_msc")
    kp_pc_msc: float = _mid("kp_pc_msc")
    ki_pc_msc: float = _mid("ki_pc_msc")
    t_cc_gsc: float = _mid("t_cc_gsc")
    kp_vc_gsc: float = _mid("kp_vc_gsc")
    ki_vc_gsc: float = _mid("ki_vc_gsc")
    available_power: float = 1.0

    def limits(self):
        if self.kind == "ES":
            return -1.0, 1.0
        return 0.0, self.available_power

    def out_of_range(self):
        """Names of converter parameters outside their declared ranges."""
        bad = []
        for name, (lo, hi) in PARAM_RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                bad.append(name)
        return bad


def corner_params(base, which):
    """All six converter parameters at their lower ('lower') or upper ('upper') bound."""
    idx = {"lower": 0, "upper": 1}[which]
    return replace(base, **{k: v[idx] for k, v in PARAM_RANGES.items()})


def with_converter_params(asset, source):
    """`asset` with the six converter parameters taken from `source`; kind and rating kept."""
    return replace(asset, **{k: getattr(source, k) for k in PARAM_RANGES})


def all_corners(base):
    """The 64 combinations of range end points."""
    names = list(PARAM_RANGES)
    out = []
    for bits in itertools.product((0, 1), repeat=len(names)):
        out.append(replace(base, **{n: PARAM_RANGES[n][b] for n, b in zip(names, bits)}))
    return out


def build_asset_dynamics(p):
    """Power command to PoC power, unity DC gain."""
    kp, ki = p.kp_pc_msc, p.ki_pc_msc
    power_loop = TransferFunction((ki, kp), (ki, 1.0 + kp))
    msc_lag = TransferFunction((1.0,), (1.0, p.t_cc_msc))
    kv, kiv = p.kp_vc_gsc, p.ki_vc_gsc
    dc_loop = TransferFunction((kiv, kv), (kiv, kv, 1.0))
    gsc_lag = TransferFunction((1.0,), (1.0, p.t_cc_gsc))
    for block in (power_loop, dc_loop, msc_lag, gsc_lag):
        if not block.is_stable():
            raise UnstableComposition("inner control loop has a right half plane pole")
    return power_loop * msc_lag * dc_loop * gsc_lag


@dataclass(frozen=True)
class FcSettings:
    t_ffr: tuple = (1.0, 10.0, 2.0)
    db_ffr: float = 0.2
    db_fcr: float = 0.1
    r_fcr: float = 0.04
    reserves_up: tuple = (0.0, 0.0, 0.0)
    reserves_down: tuple = (0.0, 0.0, 0.0)

    def scaled(self, factor):
        """Same settings with every reserve multiplied by factor."""
        return replace(
            self,
            reserves_up=tuple(r * factor for r in self.reserves_up),
            reserves_down=tuple(r * factor for r in self.reserves_down),
        )


def fcr_droop(delta_f, s, f_nom):
    """Droop response with a soft deadband, clamped to the FCR reserves."""
    db = s.db_fcr
    if delta_f > db:
        p = -(delta_f - db) / (f_nom * s.r_fcr)
        lim = -s.reserves_down[FCR]
        return p if p > lim else lim
    if delta_f < -db:
        p = -(delta_f + db) / (f_nom * s.r_fcr)
        lim = s.reserves_up[FCR]
        return p if p < lim else lim
    return 0.0


@dataclass
class FfrLatch:
    latched: bool = False
    t0: float = math.nan
    direction: int = 0
    done: bool = False


def trapezoid(elapsed, t_rise, t_dur, t_fall, level):
    if elapsed < 0.0:
        return 0.0
    if elapsed < t_rise:
        return level * elapsed / t_rise
    elapsed -= t_rise
    if elapsed <= t_dur:
        return level
    elapsed -= t_dur
    if elapsed < t_fall:
        return level * (1.0 - elapsed / t_fall)
    return 0.0


def ffr_output(t_now, f_meas, s, st, f_nom):
    """Latched trapezoid FFR injection; st is an FfrLatch updated in place."""
    df = f_meas - f_nom
    if not st.latched:
        if st.done:
            # one activation per event: re-arm only once back inside the deadband
            if abs(df) <= s.db_ffr:
                st.done = False
            return 0.0
        if df < -s.db_ffr and s.reserves_up[FFR] > 0.0:
            st.latched, st.t0, st.direction = True, t_now, 1
        elif df > s.db_ffr and s.reserves_down[FFR] > 0.0:
            st.latched, st.t0, st.direction = True, t_now, -1
        else:
            return 0.0
    level = s.reserves_up[FFR] if st.direction > 0 else -s.reserves_down[FFR]
    r, d, fl = s.t_ffr
    elapsed = t_now - st.t0
    if elapsed >= r + d + fl:
        st.latched, st.t0, st.direction, st.done = False, math.nan, 0, True
        if abs(df) <= s.db_ffr:
            st.done = False
        return 0.0
    return trapezoid(elapsed, r, d, fl, level)


@dataclass
class AssetState:
    params: AssetParams
    power_filter: object
    settings: FcSettings = field(default_factory=FcSettings)
    latch: FfrLatch = field(default_factory=FfrLatch)
    p_ref_local: float = 0.0
    malfunction: bool = False
    fc_enabled: bool = True
    saturated: int = 0
    last_ffr: float = 0.0
    last_fcr: float = 0.0

    @property
    def ffr_latched(self):
        return self.latch.latched

    @property
    def ffr_t0(self):
        return self.latch.t0


def make_asset(params, settings, dt, p_ref=0.0, malfunction=False, fc_enabled=True, model=None):
    """Asset with its dynamics discretized and initialised at steady state for p_ref."""
    g = build_asset_dynamics(params) if model is None else model
    filt = tf_discretize(g, dt)
    filt.reset(p_ref)
    return AssetState(params, filt, settings, FfrLatch(), p_ref, malfunction, fc_enabled)


def asset_step(st, p_ref, f_meas, s, t, f_nom=50.0):
    """Advance one asset by one step; returns (p_out, p_fc)."""
    st.p_ref_local = p_ref
    if st.malfunction or not st.fc_enabled:
        ffr = fcr = 0.0
    else:
        fcr = fcr_droop(f_meas - f_nom, s, f_nom)
        ffr = ffr_output(t, f_meas, s, st.latch, f_nom)
    st.last_ffr, st.last_fcr = ffr, fcr
    p_fc = ffr + fcr
    cmd = p_ref + p_fc
    lo, hi = st.params.limits()
    if cmd > hi:
        cmd, st.saturated = hi, 1
    elif cmd < lo:
        cmd, st.saturated = lo, -1
    else:
        st.saturated = 0
    return st.power_filter.step_unchecked(cmd), p_fc
