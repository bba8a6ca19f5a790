"""Nominal controller design for a scenario: PI gains and FROB filters.

Plant loops are tuned on the nominal asset dynamics; the HPP loop is tuned
on the sum of the plant closed loops it commands.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .analysis import (
    frob_closed_loops, loop_transfer, pi_tf, pi_tune, q_select, template_q,
)
from .assets import build_asset_dynamics
from .lti import TransferFunction


@dataclass(frozen=True)
class LoopDesign:
    kp: float
    ki: float
    q_n: int
    q_omega_c: float
    bandwidth_hz: float = math.nan
    phase_margin_deg: float = math.nan
    pm_met: bool = False

    @property
    def c_p(self):
        return pi_tf(self.kp, self.ki)

    @property
    def q(self):
        return template_q(self.q_n, self.q_omega_c)

    def to_dict(self):
        return {"kp": self.kp, "ki": self.ki, "q_n": self.q_n, "q_omega_c": self.q_omega_c}


def capacity(a):
    return a.rating * (1.0 if a.kind == "ES" else a.available_power)


def dispatch_weights(assets):
    caps = [capacity(a) for a in assets]
    total = sum(caps)
    return [c / total for c in caps]


def plant_model(assets, weights=None):
    """Plant command (HPP pu) to plant PoC power: sum of weight * asset dynamics."""
    weights = dispatch_weights(assets) if weights is None else weights
    models = [build_asset_dynamics(a) for a in assets]
    if all(m == models[0] for m in models):
        return models[0]
    total = TransferFunction((0.0,), (1.0,))
    for w, m in zip(weights, models):
        total = total + w * m
    return total


@lru_cache(maxsize=64)
def _tune_cached(num, den, bw_hz, pm_deg, omega_noise, omega_resp):
    g = TransferFunction(num, den)
    tuning = pi_tune(g, bw_hz, pm_deg)
    c = pi_tf(tuning.kp, tuning.ki)
    q = q_select(g, c, TransferFunction.gain(1.0), g, omega_noise, omega_resp)
    return LoopDesign(tuning.kp, tuning.ki, q.n, q.omega_c, tuning.bandwidth_hz,
                      tuning.phase_margin_deg, tuning.pm_met)


def design_loop(g, bw_hz, pm_deg, omega_noise, omega_resp):
    return _tune_cached(g.num, g.den, bw_hz, pm_deg, omega_noise, omega_resp)


def from_fragment(d, fallback):
    if not d:
        return fallback
    base = fallback.to_dict() if fallback is not None else {}
    merged = {**base, **d}
    return LoopDesign(float(merged["kp"]), float(merged["ki"]), int(merged["q_n"]),
                      float(merged["q_omega_c"]))


def plant_closed_loop(g_n, design):
    return frob_closed_loops(design.c_p, g_n, g_n, design.q, TransferFunction.gain(1.0), g_n)


def plant_response(pc, g_n, loops):
    """Reference-to-PoC transfer of a plant as seen from the HPP controller."""
    return g_n if pc.strategy == "OpenLoop" else loops.g_yry


@dataclass
class ScenarioDesign:
    plants: dict
    plant_models: dict
    hpp: LoopDesign | None
    hpp_model: TransferFunction
    hpp_weights: list
    plant_loops: dict


def hpp_weights(sc):
    caps = [sum(capacity(a) for a in p.assets) for p in sc.plants]
    if all(p.hpp_share is not None for p in sc.plants):
        caps = [p.hpp_share for p in sc.plants]
    total = sum(caps)
    return [c / total for c in caps]


def scenario_design(sc):
    """Design every loop of a validated ScenarioConfig, honouring fixed values in sc.design."""
    d = sc.design
    plants, models, loops = {}, {}, {}
    for p in sc.plants:
        g = plant_model(p.assets)
        models[p.name] = g
        frag = d.plants.get(p.name)
        if frag and all(k in frag for k in ("kp", "ki", "q_n", "q_omega_c")):
            plants[p.name] = from_fragment(frag, None)
        else:
            base = design_loop(g, d.plant_bw_hz, d.pm_deg, d.omega_noise, d.omega_resp)
            plants[p.name] = from_fragment(frag, base)
        loops[p.name] = plant_closed_loop(g, plants[p.name])

    weights = hpp_weights(sc)
    responses = [plant_response(p, models[p.name], loops[p.name]) for p in sc.plants]
    if all(r == responses[0] for r in responses):
        g_hpp = responses[0]
    else:
        g_hpp = TransferFunction((0.0,), (1.0,))
        for w, r in zip(weights, responses):
            g_hpp = g_hpp + w * r
    frag = d.hpp
    if not sc.hpp.enabled:
        hpp = None
    elif frag and all(k in frag for k in ("kp", "ki", "q_n", "q_omega_c")):
        hpp = from_fragment(frag, None)
    else:
        hpp = from_fragment(frag, design_loop(g_hpp, d.hpp_bw_hz, d.pm_deg, d.omega_noise, d.omega_resp))
    return ScenarioDesign(plants, models, hpp, g_hpp, weights, loops)


def design_fragment(sd):
    return {
        "plants": {name: ld.to_dict() for name, ld in sd.plants.items()},
        "hpp": sd.hpp.to_dict() if sd.hpp is not None else {},
    }


def nominal_loop_transfer(g_n, design):
    return loop_transfer(design.q, design.c_p, g_n, g_n)
