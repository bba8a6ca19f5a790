"""Plant controllers, the HPP controller and the frequency response observer.

Powers inside the HPP are in pu of the HPP rating. Asset setpoints leave the
plant controller converted to pu of each asset's own rating.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .assets import FFR, FcSettings, FfrLatch, fcr_droop, ffr_output, trapezoid
from .errors import NonFiniteInput
from .lti import tf_discretize

STRATEGIES = ("OpenLoop", "Feedforward", "FROB", "NoCoordination")


@dataclass(frozen=True)
class SetpointBundle:
    p_ref: float
    reserves_up: tuple = (0.0, 0.0, 0.0)
    reserves_down: tuple = (0.0, 0.0, 0.0)
    t_ffr: tuple = (1.0, 10.0, 2.0)
    db_ffr: float = 0.2
    db_fcr: float = 0.1
    r_fcr: float = 0.04

    def settings(self):
        return FcSettings(self.t_ffr, self.db_ffr, self.db_fcr, self.r_fcr,
                          tuple(self.reserves_up), tuple(self.reserves_down))


def asset_settings(bundle, share):
    """FC settings for an asset carrying `share` of the plant reserves.

    share is (asset reserve in its own pu) / (plant reserve in HPP pu), i.e.
    weight / rating. Times, deadbands and droop pass through unchanged.
    """
    return bundle.settings().scaled(share)


# FROB ---------------------------------------------------------------------


@dataclass
class FrobInstance:
    g_n_filter: object
    q_filter: object
    last_estimate: float = 0.0

    def reset(self, u0):
        y0 = self.g_n_filter.reset(u0)
        self.q_filter.reset(0.0)
        self.last_estimate = 0.0
        return y0


def make_frob(g_n, q, dt):
    qtf = q.tf if hasattr(q, "tf") else q
    return FrobInstance(tf_discretize(g_n, dt), tf_discretize(qtf, dt))


def frob_step(fr, u, y_m):
    """Estimate of the FC response: Q (y_m - G_n u)."""
    if not (math.isfinite(u) and math.isfinite(y_m)):
        raise NonFiniteInput("FROB input is not finite")
    est = fr.q_filter.step_unchecked(y_m - fr.g_n_filter.step_unchecked(u))
    fr.last_estimate = est
    return est


@dataclass
class MisoNominal:
    """Sum of SISO branches, one per plant command."""

    branches: list

    def step(self, us):
        total = 0.0
        for f, u in zip(self.branches, us):
            total += f.step_unchecked(u)
        return total

    def reset(self, us):
        return sum(f.reset(u) for f, u in zip(self.branches, us))


def build_hpp_nominal(responses, dt):
    """Discretized reference-to-PoC transfer of each plant."""
    return MisoNominal([tf_discretize(g, dt) for g in responses])


@dataclass
class MisoFrob:
    model: MisoNominal
    q_filter: object
    last_estimate: float = 0.0

    def step(self, us, y_m):
        est = self.q_filter.step_unchecked(y_m - self.model.step(us))
        self.last_estimate = est
        return est

    def reset(self, us):
        y0 = self.model.reset(us)
        self.q_filter.reset(0.0)
        self.last_estimate = 0.0
        return y0


# dispatch -------------------------------------------------------------------


def dispatch(u, weights, lo, hi):
    """Proportional split of u with water-filling around saturated assets.

    Returns per-asset values in the same unit as u. Without saturation the
    result is exactly weights * u.
    """
    n = len(weights)
    out = [w * u for w in weights]
    for o, l, h in zip(out, lo, hi):
        if o > h or o < l:
            break
    else:
        return out
    free = [True] * n
    for _ in range(n):
        excess = 0.0
        for i in range(n):
            if not free[i]:
                continue
            if out[i] > hi[i]:
                excess += out[i] - hi[i]
                out[i], free[i] = hi[i], False
            elif out[i] < lo[i]:
                excess += out[i] - lo[i]
                out[i], free[i] = lo[i], False
        if excess == 0.0:
            break
        wsum = sum(w for w, f in zip(weights, free) if f)
        if wsum <= 0.0:
            break
        for i in range(n):
            if free[i]:
                out[i] += excess * weights[i] / wsum
    return out


# Strategy #2 -------------------------------------------------------------


def strategy2_estimate(f_poc, s, asset_count_assumed, f_nom=50.0, elapsed=None):
    """Open-loop FC estimate from issued settings: count x (droop + FFR shape).

    `elapsed` is the time since the FFR trigger, or None when not triggered.
    """
    fcr = fcr_droop(f_poc - f_nom, s, f_nom)
    ffr = 0.0
    if elapsed is not None:
        r, d, fl = s.t_ffr
        ffr = trapezoid(elapsed, r, d, fl, s.reserves_up[FFR])
    return asset_count_assumed * (fcr + ffr)


@dataclass
class Strategy2Estimator:
    """Settings-driven estimate of the plant FC response, in HPP pu.

    Each assumed asset contributes rating * (droop + FFR) computed from the
    PoC frequency; the sum is passed through the nominal command-to-output
    dynamics so it lines up in time with a healthy response.
    """

    ratings: list
    settings: list
    dynamics: object
    f_nom: float = 50.0
    latch: FfrLatch = field(default_factory=FfrLatch)

    def __post_init__(self):
        s0 = self.settings[0]
        # unit-level copy: its FFR output is the trapezoid shape as a fraction
        self._unit = FcSettings(s0.t_ffr, s0.db_ffr, s0.db_fcr, s0.r_fcr, (1.0, 0.0, 0.0), (1.0, 0.0, 0.0))

    def step(self, t, f_poc):
        frac = ffr_output(t, f_poc, self._unit, self.latch, self.f_nom)
        total = 0.0
        for rating, s in zip(self.ratings, self.settings):
            ffr = frac * (s.reserves_up[FFR] if frac > 0 else s.reserves_down[FFR])
            total += rating * (fcr_droop(f_poc - self.f_nom, s, self.f_nom) + ffr)
        return self.dynamics.step(total)


# plant controller -----------------------------------------------------------


@dataclass
class PlantController:
    kp: float
    ki: float
    integ: float
    weights: list
    ratings: list
    lo: list
    hi: list
    strategy: str = "FROB"
    frob: FrobInstance = None
    estimator: Strategy2Estimator = None
    u_last: float = 0.0
    estimate: float = 0.0
    saturated: list = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.saturated is None:
            self.saturated = [0] * len(self.weights)

    def initialize(self, y_r):
        self.integ = y_r
        self.u_last = y_r
        if self.frob is not None:
            self.frob.reset(y_r)
        if self.estimator is not None:
            self.estimator.dynamics.reset(0.0)


def plant_step(pc, y_r, y_m, dt, t=0.0, f_poc=50.0):
    """One controller step; returns per-asset setpoints in asset pu."""
    if not (math.isfinite(y_r) and math.isfinite(y_m)):
        raise NonFiniteInput("plant controller input is not finite")
    strategy = pc.strategy
    est = 0.0
    if pc.frob is not None:
        est = frob_step(pc.frob, pc.u_last, y_m)
    if strategy == "OpenLoop":
        u = y_r
    else:
        if strategy == "FROB":
            fb = y_m - est
        elif strategy == "Feedforward":
            est = pc.estimator.step(t, f_poc)
            fb = y_m - est
        else:
            fb = y_m
        e = y_r - fb
        sat = pc.saturated
        push_up = e > 0 and max(sat) > 0
        push_down = e < 0 and min(sat) < 0
        if not (push_up or push_down):
            pc.integ += pc.ki * e * dt
        u = pc.kp * e + pc.integ
    pc.estimate = est
    pc.u_last = u
    refs = dispatch(u, pc.weights, pc.lo, pc.hi)
    return [r / rating for r, rating in zip(refs, pc.ratings)]


# HPP controller -------------------------------------------------------------


@dataclass
class HppController:
    kp: float
    ki: float
    base_refs: list
    weights: list
    frr_weights: list
    frob: MisoFrob = None
    mode: str = "distributed"
    integ: float = 0.0
    p_frr_set: float = 0.0
    fc_settings: FcSettings = None
    ffr_weights: list = None
    fcr_weights: list = None
    f_nom: float = 50.0
    latch: FfrLatch = field(default_factory=FfrLatch)
    estimate: float = 0.0
    fc_command: float = 0.0
    last_ffr: float = 0.0
    last_fcr: float = 0.0
    u_last: list = None

    def initialize(self):
        self.integ = 0.0
        self.u_last = list(self.base_refs)
        if self.frob is not None:
            self.frob.reset(self.u_last)


def hpp_step(hc, p_hpp_ref, y_m_poc, dt, t=0.0, f_poc=None):
    """Per-plant power references (HPP pu)."""
    if not (math.isfinite(p_hpp_ref) and math.isfinite(y_m_poc)):
        raise NonFiniteInput("HPP controller input is not finite")
    est = 0.0
    if hc.frob is not None:
        est = hc.frob.step(hc.u_last, y_m_poc)
    e = p_hpp_ref + hc.p_frr_set - (y_m_poc - est)
    hc.integ += hc.ki * e * dt
    v = hc.kp * e + hc.integ
    us = [b + fw * hc.p_frr_set + w * v
          for b, fw, w in zip(hc.base_refs, hc.frr_weights, hc.weights)]
    hc.u_last = us
    hc.estimate = est
    if hc.mode == "centralized":
        centralized_fc(hc, t, f_poc if f_poc is not None else hc.f_nom)
        ffr, fcr = hc.last_ffr, hc.last_fcr
        return [u + a * ffr + b * fcr for u, a, b in zip(us, hc.ffr_weights, hc.fcr_weights)]
    return list(us)


def centralized_fc(hc, t, f_poc):
    """FFR + FCR computed at the HPP level from the PoC frequency (HPP pu)."""
    s = hc.fc_settings
    fcr = fcr_droop(f_poc - hc.f_nom, s, hc.f_nom)
    ffr = ffr_output(t, f_poc, s, hc.latch, hc.f_nom)
    hc.last_ffr, hc.last_fcr = ffr, fcr
    hc.fc_command = ffr + fcr
    return hc.fc_command


def centralized_step(hc, f_poc, p_hpp_ref, y_m_poc, dt, t=0.0):
    if hc.mode != "centralized":
        raise ValueError("centralized_step needs an HPP controller in centralized mode")
    return hpp_step(hc, p_hpp_ref, y_m_poc, dt, t=t, f_poc=f_poc)
