"""Single-bus frequency dynamics: swing equation, governor-turbine unit, AGC.

Frequency is carried as a per-unit deviation df (Hz deviation / f_nom).
Powers are deviations from the initial balanced operating point, on the
system base.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import NonFiniteInput, UnsortedSchedule

EVENT_KINDS = ("load_step", "frr_dispatch", "agc_on")


@dataclass(frozen=True)
class GridParams:
    h: float = 4.0
    d_load: float = 1.0
    r_sys: float = 0.05
    t_gov: float = 0.2
    t_turb: float = 0.5
    f_nom: float = 50.0
    hpp_share: float = 0.2
    k_agc: float = 0.1

    def steady_deviation(self, load_step, extra_gain=0.0):
        """Pre-AGC steady df (pu) after a load step; extra_gain adds other droop (pu/pu)."""
        return -load_step / (1.0 / self.r_sys + self.d_load + extra_gain)


@dataclass(frozen=True)
class GridEvent:
    t: float
    kind: str
    magnitude: float = 0.0


@dataclass
class GridState:
    params: GridParams
    df: float = 0.0
    gov: float = 0.0
    p_conv: float = 0.0
    agc: float = 0.0
    agc_on: bool = False
    p_load: float = 0.0
    p_frr_set: float = 0.0
    next_event: int = 0
    fired: list = field(default_factory=list)

    @property
    def f_hz(self):
        return self.params.f_nom * (1.0 + self.df)


def check_schedule(schedule):
    for a, b in zip(schedule, schedule[1:]):
        if b.t < a.t:
            raise UnsortedSchedule(f"event at t={b.t} listed after t={a.t}")
    for ev in schedule:
        if ev.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {ev.kind!r}")


def apply_events(schedule, t, state, eps=1e-9):
    """Fire every not-yet-fired event with ev.t <= t; each fires exactly once."""
    if state.next_event == 0 and schedule:
        check_schedule(schedule)
    while state.next_event < len(schedule) and schedule[state.next_event].t <= t + eps:
        ev = schedule[state.next_event]
        if ev.kind == "load_step":
            state.p_load += ev.magnitude
        elif ev.kind == "frr_dispatch":
            state.p_frr_set += ev.magnitude
        elif ev.kind == "agc_on":
            state.agc_on = True
        state.fired.append((t, ev))
        state.next_event += 1
    return state


def grid_step(state, p_hpp, dt):
    """Explicit Euler step; p_hpp is the HPP power deviation on the system base."""
    if not math.isfinite(p_hpp):
        raise NonFiniteInput(f"p_hpp={p_hpp!r}")
    p = state.params
    df = state.df
    gov_in = -df / p.r_sys + state.agc
    if p.t_gov > 0:
        gov = state.gov + dt * (gov_in - state.gov) / p.t_gov
    else:
        gov = gov_in
    if p.t_turb > 0:
        p_conv = state.p_conv + dt * (state.gov - state.p_conv) / p.t_turb
    else:
        p_conv = gov
    accel = (state.p_conv + p_hpp - state.p_load - p.d_load * df) / (2.0 * p.h)
    state.df = df + dt * accel
    if state.agc_on:
        state.agc -= p.k_agc * df * dt
    state.gov, state.p_conv = gov, p_conv
    return p.f_nom * (1.0 + state.df)


def swing_residual(state, p_hpp):
    """Right hand side of the swing equation times 1 (i.e. 2H d(df)/dt)."""
    p = state.params
    return state.p_conv + p_hpp - state.p_load - p.d_load * state.df
