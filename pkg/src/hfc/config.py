"""Scenario configuration: JSON schema version 1, parsing and validation.

Powers are in pu of the HPP rating unless noted. Asset ratings are
fractions of the HPP rating; asset available_power is pu of the asset's
own rating.
"""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

from .assets import FCR, FFR, FRR, PARAM_RANGES, AssetParams
from .errors import ValidationError
from .grid import EVENT_KINDS, GridEvent, GridParams
from .hierarchy import STRATEGIES, SetpointBundle

SCHEMA_VERSION = 1
DELAY_RANGE = (0.0, 2.0)
LINKS = ("plant_to_asset", "hpp_to_plant")
STRATEGY_ALIASES = {
    "OpenLoop#1": "OpenLoop", "Feedforward#2": "Feedforward", "FROB#3": "FROB",
    "1": "OpenLoop", "2": "Feedforward", "3": "FROB",
}


class ConfigErrors(Exception):
    """All violations found in one config, each a ValidationError."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


@dataclass
class DelayProfile:
    profile: str = "constant"
    t_min: float = 0.0
    t_max: float = 0.0
    period: float = 2 * math.pi / 0.1

    def value(self, t):
        if self.profile == "constant":
            return self.t_max
        mid = 0.5 * (self.t_min + self.t_max)
        amp = 0.5 * (self.t_max - self.t_min)
        return mid + amp * math.sin(2 * math.pi * t / self.period)


@dataclass
class NoiseConfig:
    amplitude: float = 0.002
    corner: float = 50.0
    seed: int = 1


@dataclass
class UncertaintyConfig:
    corner: str = None
    param_overrides: dict = field(default_factory=dict)
    malfunction_fraction: float = 0.0
    seed: int = 7


@dataclass
class PlantConfig:
    name: str
    kind: str
    strategy: str
    bundle: SetpointBundle
    assets: list
    frr_share: float = 0.0
    hpp_share: float = None


@dataclass
class HppConfig:
    enabled: bool = True
    p_ref: float = None
    bundle: SetpointBundle = None


@dataclass
class DesignConfig:
    omega_resp: float = 1.0
    omega_noise: float = 50.0
    plant_bw_hz: float = 0.25
    pm_deg: float = 150.0
    hpp_bw_hz: float = 0.125
    t_max: float = 2.0
    plants: dict = field(default_factory=dict)
    hpp: dict = field(default_factory=dict)


@dataclass
class OutputConfig:
    record_interval: float = 0.01
    columns: list = None
    metrics_channel: str = "p_fc_poc_pu"
    event_t: float = None
    window_end: float = None


@dataclass
class ScenarioConfig:
    name: str
    dt: float
    duration: float
    f_nom: float
    mode: str
    grid: GridParams
    events: list
    hpp: HppConfig
    plants: list
    delays: dict
    noise: NoiseConfig
    uncertainty: UncertaintyConfig
    design: DesignConfig
    outputs: OutputConfig
    seed: int = 1

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d


def _num(errs, path, v, lo=None, hi=None, lo_open=False, default=None):
    if v is None:
        v = default
    if v is None:
        errs.append(ValidationError(path, "is required"))
        return math.nan
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        errs.append(ValidationError(path, f"must be a finite number, got {v!r}"))
        return math.nan
    v = float(v)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        errs.append(ValidationError(path, f"must be {'>' if lo_open else '>='} {lo}, got {v}"))
    if hi is not None and v > hi:
        errs.append(ValidationError(path, f"must be <= {hi}, got {v}"))
    return v


def _vec3(errs, path, v):
    if v is None:
        return (0.0, 0.0, 0.0)
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        errs.append(ValidationError(path, "must be a list of three numbers (FFR, FCR, FRR)"))
        return (0.0, 0.0, 0.0)
    return tuple(_num(errs, f"{path}[{i}]", x, lo=0.0) for i, x in enumerate(v))


def _known(errs, path, d, allowed):
    for k in d:
        if k not in allowed:
            errs.append(ValidationError(f"{path}.{k}", "unknown field"))


def _bundle(errs, path, d, p_ref_default=0.0):
    d = d or {}
    _known(errs, path, d, {"p_ref", "reserves_up", "reserves_down", "t_ffr", "db_ffr", "db_fcr", "r_fcr"})
    t_ffr = d.get("t_ffr", [1.0, 10.0, 2.0])
    if not isinstance(t_ffr, (list, tuple)) or len(t_ffr) != 3:
        errs.append(ValidationError(f"{path}.t_ffr", "must be [t_rise, t_dur, t_fall]"))
        t_ffr = (1.0, 10.0, 2.0)
    t_ffr = tuple(_num(errs, f"{path}.t_ffr[{i}]", x, lo=0.0) for i, x in enumerate(t_ffr))
    return SetpointBundle(
        p_ref=_num(errs, f"{path}.p_ref", d.get("p_ref"), default=p_ref_default),
        reserves_up=_vec3(errs, f"{path}.reserves_up", d.get("reserves_up")),
        reserves_down=_vec3(errs, f"{path}.reserves_down", d.get("reserves_down")),
        t_ffr=t_ffr,
        db_ffr=_num(errs, f"{path}.db_ffr", d.get("db_ffr"), lo=0.0, default=0.2),
        db_fcr=_num(errs, f"{path}.db_fcr", d.get("db_fcr"), lo=0.0, default=0.1),
        r_fcr=_num(errs, f"{path}.r_fcr", d.get("r_fcr"), lo=0.0, lo_open=True, default=0.04),
    )


_ASSET_FIELDS = {f.name for f in fields(AssetParams)}


def _asset(errs, path, d, kind_default):
    d = dict(d or {})
    _known(errs, path, d, _ASSET_FIELDS | {"count", "fc_enabled"})
    kind = d.get("kind", kind_default)
    if kind not in ("WT", "PV", "ES"):
        errs.append(ValidationError(f"{path}.kind", f"must be WT, PV or ES, got {kind!r}"))
        kind = "ES"
    kw = {"kind": kind}
    kw["rating"] = _num(errs, f"{path}.rating", d.get("rating"), lo=0.0, lo_open=True)
    kw["available_power"] = _num(errs, f"{path}.available_power", d.get("available_power"),
                                 lo=0.0, hi=1.0, default=1.0)
    for name, (lo, hi) in PARAM_RANGES.items():
        kw[name] = _num(errs, f"{path}.{name}", d.get(name), lo=lo, hi=hi, default=0.5 * (lo + hi))
    count = d.get("count", 1)
    if not isinstance(count, int) or count < 1:
        errs.append(ValidationError(f"{path}.count", "must be a positive integer"))
        count = 1
    fc_enabled = d.get("fc_enabled", None)
    return [AssetParams(**kw) for _ in range(count)], fc_enabled


def _delay(errs, path, d):
    d = d or {}
    _known(errs, path, d, {"profile", "t_min", "t_max", "period"})
    prof = d.get("profile", "constant")
    if prof not in ("constant", "sinusoidal"):
        errs.append(ValidationError(f"{path}.profile", "must be 'constant' or 'sinusoidal'"))
    lo, hi = DELAY_RANGE
    t_max = _num(errs, f"{path}.t_max", d.get("t_max"), default=0.0)
    t_min = _num(errs, f"{path}.t_min", d.get("t_min"), default=0.0 if prof == "sinusoidal" else t_max)
    for name, v in (("t_min", t_min), ("t_max", t_max)):
        if math.isfinite(v) and not lo <= v <= hi:
            errs.append(ValidationError(f"{path}.{name}",
                                        f"delay {v} s outside the declared range [{lo}, {hi}] s"))
    if math.isfinite(t_min) and math.isfinite(t_max) and t_min > t_max:
        errs.append(ValidationError(f"{path}.t_min", "must not exceed t_max"))
    period = _num(errs, f"{path}.period", d.get("period"), lo=0.0, lo_open=True,
                  default=2 * math.pi / 0.1)
    if prof == "sinusoidal" and math.isfinite(period) and math.isfinite(t_max) and math.isfinite(t_min):
        # read time t - T(t) must never move backwards
        if math.pi * (t_max - t_min) / period >= 1.0:
            errs.append(ValidationError(f"{path}.period", "delay varies faster than time advances"))
    return DelayProfile(prof, t_min, t_max, period)


def parse_config(raw):
    """Build a ScenarioConfig from a JSON-like dict; raises ConfigErrors listing every problem."""
    errs = []
    if not isinstance(raw, dict):
        raise ConfigErrors([ValidationError("$", "top level must be a JSON object")])
    raw = copy.deepcopy(raw)
    top = {"schema_version", "name", "dt", "duration", "f_nom", "mode", "seed", "grid", "events",
           "hpp", "plants", "delays", "noise", "uncertainty", "design", "outputs", "description"}
    _known(errs, "$", raw, top)
    if raw.get("schema_version") != SCHEMA_VERSION:
        errs.append(ValidationError("schema_version", f"must be {SCHEMA_VERSION}"))

    dt = _num(errs, "dt", raw.get("dt"), lo=0.0, lo_open=True, hi=0.1, default=0.001)
    duration = _num(errs, "duration", raw.get("duration"), lo=0.0, lo_open=True, default=600.0)
    f_nom = _num(errs, "f_nom", raw.get("f_nom"), lo=0.0, lo_open=True, default=50.0)
    mode = raw.get("mode", "distributed")
    if mode not in ("distributed", "centralized"):
        errs.append(ValidationError("mode", "must be 'distributed' or 'centralized'"))
    seed = raw.get("seed", 1)
    if not isinstance(seed, int):
        errs.append(ValidationError("seed", "must be an integer"))
        seed = 1

    g = raw.get("grid", {}) or {}
    gfields = {f.name for f in fields(GridParams)} - {"f_nom"}
    _known(errs, "grid", g, gfields)
    gd = GridParams()
    grid = GridParams(
        h=_num(errs, "grid.h", g.get("h"), lo=0.0, lo_open=True, default=gd.h),
        d_load=_num(errs, "grid.d_load", g.get("d_load"), lo=0.0, default=gd.d_load),
        r_sys=_num(errs, "grid.r_sys", g.get("r_sys"), lo=0.0, lo_open=True, default=gd.r_sys),
        t_gov=_num(errs, "grid.t_gov", g.get("t_gov"), lo=0.0, default=gd.t_gov),
        t_turb=_num(errs, "grid.t_turb", g.get("t_turb"), lo=0.0, default=gd.t_turb),
        f_nom=f_nom,
        hpp_share=_num(errs, "grid.hpp_share", g.get("hpp_share"), lo=0.0, lo_open=True, hi=1.0,
                       default=gd.hpp_share),
        k_agc=_num(errs, "grid.k_agc", g.get("k_agc"), lo=0.0, default=gd.k_agc),
    )

    events = []
    for i, e in enumerate(raw.get("events", []) or []):
        p = f"events[{i}]"
        if not isinstance(e, dict):
            errs.append(ValidationError(p, "must be an object"))
            continue
        _known(errs, p, e, {"t", "kind", "magnitude"})
        kind = e.get("kind")
        if kind not in EVENT_KINDS:
            errs.append(ValidationError(f"{p}.kind", f"must be one of {', '.join(EVENT_KINDS)}"))
        t = _num(errs, f"{p}.t", e.get("t"), lo=0.0)
        events.append(GridEvent(t, kind, _num(errs, f"{p}.magnitude", e.get("magnitude"), default=0.0)))
    for i in range(1, len(events)):
        if events[i].t < events[i - 1].t:
            errs.append(ValidationError(f"events[{i}].t", "events must be sorted by time"))

    plants = []
    raw_plants = raw.get("plants")
    if not isinstance(raw_plants, list) or not raw_plants:
        errs.append(ValidationError("plants", "must be a non-empty list"))
        raw_plants = []
    names = set()
    for i, pd in enumerate(raw_plants):
        p = f"plants[{i}]"
        if not isinstance(pd, dict):
            errs.append(ValidationError(p, "must be an object"))
            continue
        _known(errs, p, pd, {"name", "kind", "strategy", "bundle", "assets", "frr_share", "hpp_share"})
        name = pd.get("name", f"plant{i}")
        if name in names:
            errs.append(ValidationError(f"{p}.name", f"duplicate plant name {name!r}"))
        names.add(name)
        kind = pd.get("kind", "ES")
        if kind not in ("WT", "PV", "ES"):
            errs.append(ValidationError(f"{p}.kind", "must be WT, PV or ES"))
        strategy = STRATEGY_ALIASES.get(str(pd.get("strategy", "FROB")), pd.get("strategy", "FROB"))
        if strategy not in STRATEGIES:
            errs.append(ValidationError(f"{p}.strategy", f"must be one of {', '.join(STRATEGIES)}"))
        bundle = _bundle(errs, f"{p}.bundle", pd.get("bundle"))
        assets = []
        raw_assets = pd.get("assets")
        if not isinstance(raw_assets, list) or not raw_assets:
            errs.append(ValidationError(f"{p}.assets", "must be a non-empty list"))
            raw_assets = []
        for j, ad in enumerate(raw_assets):
            ap = f"{p}.assets[{j}]"
            group, fc_enabled = _asset(errs, ap, ad, kind)
            if mode == "centralized" and fc_enabled:
                errs.append(ValidationError(f"{ap}.fc_enabled",
                                            "centralized mode forbids asset-level FC"))
            assets.extend(group)
        frr_share = _num(errs, f"{p}.frr_share", pd.get("frr_share"), lo=0.0, hi=1.0, default=0.0)
        hs = pd.get("hpp_share")
        hs = None if hs is None else _num(errs, f"{p}.hpp_share", hs, lo=0.0, hi=1.0)
        pc = PlantConfig(name, kind, strategy, bundle, assets, frr_share, hs)
        _check_headroom(errs, p, pc)
        plants.append(pc)

    frr_total = sum(p.frr_share for p in plants)
    has_frr = any(e.kind == "frr_dispatch" for e in events)
    if has_frr and plants and not math.isclose(frr_total, 1.0, abs_tol=1e-9):
        errs.append(ValidationError("plants", f"frr_share values must sum to 1 (got {frr_total:g})"))

    h = raw.get("hpp", {}) or {}
    _known(errs, "hpp", h, {"enabled", "p_ref", "bundle"})
    enabled = bool(h.get("enabled", True))
    sum_refs = sum(p.bundle.p_ref for p in plants) if plants else 0.0
    hpp_ref = _num(errs, "hpp.p_ref", h.get("p_ref"), default=sum_refs)
    hpp_bundle = _bundle(errs, "hpp.bundle", h.get("bundle"), p_ref_default=hpp_ref) if h.get("bundle") else None
    if mode == "centralized" and not enabled:
        errs.append(ValidationError("hpp.enabled", "centralized mode needs the HPP controller"))
    if plants and math.isfinite(hpp_ref) and hpp_ref > 1.0 + 1e-12:
        errs.append(ValidationError("hpp.p_ref", "exceeds the HPP rating (1.0 pu)"))
    hpp = HppConfig(enabled, hpp_ref, hpp_bundle)

    delays = {}
    rd = raw.get("delays", {}) or {}
    _known(errs, "delays", rd, set(LINKS))
    for link in LINKS:
        delays[link] = _delay(errs, f"delays.{link}", rd.get(link))

    n = raw.get("noise", {}) or {}
    _known(errs, "noise", n, {"amplitude", "corner", "seed"})
    noise = NoiseConfig(
        _num(errs, "noise.amplitude", n.get("amplitude"), lo=0.0, default=0.002),
        _num(errs, "noise.corner", n.get("corner"), lo=0.0, lo_open=True, default=50.0),
        n.get("seed", seed),
    )

    u = raw.get("uncertainty", {}) or {}
    _known(errs, "uncertainty", u, {"corner", "param_overrides", "malfunction_fraction", "seed"})
    corner = u.get("corner")
    if corner not in (None, "lower", "upper"):
        errs.append(ValidationError("uncertainty.corner", "must be null, 'lower' or 'upper'"))
    overrides = u.get("param_overrides", {}) or {}
    for k, v in overrides.items():
        if k not in PARAM_RANGES:
            errs.append(ValidationError(f"uncertainty.param_overrides.{k}", "unknown converter parameter"))
        else:
            lo, hi = PARAM_RANGES[k]
            _num(errs, f"uncertainty.param_overrides.{k}", v, lo=lo, hi=hi)
    unc = UncertaintyConfig(
        corner, dict(overrides),
        _num(errs, "uncertainty.malfunction_fraction", u.get("malfunction_fraction"), lo=0.0, hi=1.0,
             default=0.0),
        u.get("seed", seed),
    )

    ds = raw.get("design", {}) or {}
    _known(errs, "design", ds, {f.name for f in fields(DesignConfig)})
    dd = DesignConfig()
    design = DesignConfig(
        omega_resp=_num(errs, "design.omega_resp", ds.get("omega_resp"), lo=0.0, lo_open=True,
                        default=dd.omega_resp),
        omega_noise=_num(errs, "design.omega_noise", ds.get("omega_noise"), lo=0.0, lo_open=True,
                         default=dd.omega_noise),
        plant_bw_hz=_num(errs, "design.plant_bw_hz", ds.get("plant_bw_hz"), lo=0.0, lo_open=True,
                         default=dd.plant_bw_hz),
        pm_deg=_num(errs, "design.pm_deg", ds.get("pm_deg"), lo=0.0, default=dd.pm_deg),
        hpp_bw_hz=_num(errs, "design.hpp_bw_hz", ds.get("hpp_bw_hz"), lo=0.0, lo_open=True,
                       default=dd.hpp_bw_hz),
        t_max=_num(errs, "design.t_max", ds.get("t_max"), lo=0.0, lo_open=True, hi=DELAY_RANGE[1],
                   default=dd.t_max),
        plants=dict(ds.get("plants", {}) or {}),
        hpp=dict(ds.get("hpp", {}) or {}),
    )
    for pname in design.plants:
        if pname not in names:
            errs.append(ValidationError(f"design.plants.{pname}", "no plant with this name"))

    o = raw.get("outputs", {}) or {}
    _known(errs, "outputs", o, {f.name for f in fields(OutputConfig)})
    outputs = OutputConfig(
        record_interval=_num(errs, "outputs.record_interval", o.get("record_interval"), lo=0.0,
                             lo_open=True, default=0.01),
        columns=o.get("columns"),
        metrics_channel=o.get("metrics_channel", "p_fc_poc_pu"),
        event_t=o.get("event_t"),
        window_end=o.get("window_end"),
    )
    if math.isfinite(dt) and math.isfinite(outputs.record_interval):
        ratio = outputs.record_interval / dt
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            errs.append(ValidationError("outputs.record_interval", "must be a whole multiple of dt"))

    if errs:
        raise ConfigErrors(errs)
    return ScenarioConfig(raw.get("name", "scenario"), dt, duration, f_nom, mode, grid, events, hpp,
                          plants, delays, noise, unc, design, outputs, seed)


def _check_headroom(errs, path, pc):
    b = pc.bundle
    if not pc.assets or not all(math.isfinite(a.rating) for a in pc.assets):
        return
    cap_hi = sum(a.rating * (1.0 if a.kind == "ES" else a.available_power) for a in pc.assets)
    cap_lo = sum(-a.rating if a.kind == "ES" else 0.0 for a in pc.assets)
    up = sum(b.reserves_up)
    down = sum(b.reserves_down)
    if b.p_ref > cap_hi + 1e-12 or b.p_ref < cap_lo - 1e-12:
        errs.append(ValidationError(f"{path}.bundle.p_ref",
                                    f"{b.p_ref:g} outside plant capability [{cap_lo:g}, {cap_hi:g}]"))
    elif b.p_ref + up > cap_hi + 1e-12:
        errs.append(ValidationError(f"{path}.bundle.reserves_up",
                                    f"upward reserves {up:g} exceed headroom {cap_hi - b.p_ref:g}"))
    if b.p_ref - down < cap_lo - 1e-12:
        errs.append(ValidationError(f"{path}.bundle.reserves_down",
                                    f"downward reserves {down:g} exceed footroom {b.p_ref - cap_lo:g}"))
    if b.p_ref + up > 1.0 + 1e-12:
        errs.append(ValidationError(f"{path}.bundle.reserves_up", "p_ref plus reserves exceed 1.0 pu"))


def validate(raw):
    """Parsed and default-filled config, or ConfigErrors with every violation."""
    return parse_config(raw)


def load_config(path, seed_env="HFC_SEED"):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigErrors([ValidationError("$", f"invalid JSON: {exc}")]) from exc
    return apply_seed_override(raw, os.environ.get(seed_env))


def apply_seed_override(raw, value):
    """HFC_SEED replaces every seed in the config."""
    if value is None or value == "" or not isinstance(raw, dict):
        return raw
    seed = int(value)
    raw = copy.deepcopy(raw)
    raw["seed"] = seed
    for key in ("noise", "uncertainty"):
        if isinstance(raw.get(key), dict):
            raw[key]["seed"] = seed
    return raw


__all__ = ["ScenarioConfig", "ConfigErrors", "parse_config", "validate", "load_config", "FFR", "FCR", "FRR"]
