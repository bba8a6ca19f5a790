"""Fixed-step simulation of the hybrid plant on a single-bus grid.

Holds the delay lines, the measurement noise, the recorder and the response
metrics, plus `run`, which wires assets, plant controllers, the HPP
controller and the grid together for one scenario.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .assets import FCR, FFR, FcSettings, corner_params, make_asset, asset_step
from .design import dispatch_weights, plant_response, scenario_design
from .errors import (
    BufferUnderrun, ChannelMissing, NoResponse, NoSteadyState, NonFiniteInput,
    NumericalDivergence, ValidationError,
)
from .grid import GridState, apply_events, grid_step
from .hierarchy import (
    HppController, MisoFrob, PlantController, Strategy2Estimator, asset_settings,
    build_hpp_nominal, hpp_step, make_frob, plant_step,
)
from .lti import tf_discretize


# delay lines ----------------------------------------------------------------


@dataclass
class DelayLine:
    """Ring buffer of samples written every dt, read back at t - T(t).

    Sample k is the value written at t = k * dt. Reads interpolate linearly
    between bracketing samples; read times before the first write return the
    initial value, read times past the newest sample return the newest one.
    """

    dt: float
    profile: object
    initial: float = 0.0
    t_max: float = None

    def __post_init__(self):
        if self.t_max is None:
            self.t_max = float(self.profile.t_max)
        self.size = int(math.ceil(self.t_max / self.dt)) + 3
        self._buf = [self.initial] * self.size
        self._first = None
        self._last = -1
        self._last_read = -math.inf

    def write(self, t, value):
        k = int(round(t / self.dt))
        if self._first is None:
            self._first = k
        self._last = k
        self._buf[k % self.size] = value

    def read(self, t, delay=None):
        T = self.profile.value(t) if delay is None else delay
        r = (t - T) / self.dt
        rk = round(r)
        if abs(r - rk) < 1e-9:
            r = rk  # on-grid read times land exactly on a sample
        if r < self._last_read:
            r = self._last_read
        self._last_read = r
        last = self._last
        if self._first is None:
            return self.initial
        if r >= last:
            return self._buf[last % self.size]
        i = math.floor(r)
        if last - i >= self.size - 1:
            raise BufferUnderrun(f"read {T:.4g} s back needs more than {self.size} samples")
        first = self._first
        v0 = self._buf[i % self.size] if i >= first else self.initial
        v1 = self._buf[(i + 1) % self.size] if i + 1 >= first else self.initial
        frac = r - i
        return v0 + frac * (v1 - v0)


def delay_read(dl, t):
    return dl.read(t)


class _Hold:
    """Zero-delay link: returns the newest value written."""

    def __init__(self, initial):
        self.value = initial

    def write(self, t, value):
        self.value = value

    def read(self, t, delay=None):
        return self.value


def make_link(dt, profile, initial):
    if profile.profile == "constant" and profile.t_max == 0.0:
        return _Hold(initial)
    return DelayLine(dt, profile, initial)


# measurement noise ------------------------------------------------------------


class NoiseSource:
    """Gaussian noise through a first-order low pass at `corner` rad/s.

    The stationary standard deviation equals `amplitude`. Samples come from
    numpy's default generator in fixed-size blocks, so a seed fixes the
    sequence regardless of how it is consumed.
    """

    BLOCK = 1 << 15

    def __init__(self, seed, amplitude, corner, dt):
        if amplitude < 0:
            raise ValueError("noise amplitude must be >= 0")
        self.seed, self.amplitude, self.corner, self.dt = seed, float(amplitude), float(corner), dt
        self._rng = np.random.default_rng(seed)
        self._a = math.exp(-corner * dt)
        self._b = amplitude * math.sqrt(1.0 - self._a * self._a)
        self._state = amplitude * float(self._rng.standard_normal())
        self._block = []
        self._pos = 0

    def _refill(self):
        w = self._rng.standard_normal(self.BLOCK)
        y, zf = lfilter([self._b], [1.0, -self._a], w, zi=[self._a * self._state])
        self._state = float(y[-1])
        self._block = y.tolist()
        self._pos = 0

    def next(self):
        if self.amplitude == 0.0:
            return 0.0
        if self._pos >= len(self._block):
            self._refill()
        v = self._block[self._pos]
        self._pos += 1
        return v

    def take(self, n):
        return np.array([self.next() for _ in range(n)])


# records ------------------------------------------------------------------------


@dataclass
class TimeSeriesRecord:
    columns: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("columns have different lengths")
        if "t_s" not in self.columns:
            raise ValueError("record needs a t_s column")
        t = np.asarray(self.columns["t_s"])
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("t_s must be strictly increasing")

    def __getitem__(self, name):
        try:
            return self.columns[name]
        except KeyError:
            raise ChannelMissing(f"no channel {name!r} in record") from None

    def __contains__(self, name):
        return name in self.columns

    @property
    def t(self):
        return self.columns["t_s"]

    @property
    def names(self):
        return list(self.columns)

    def __len__(self):
        return len(self.columns["t_s"])

    def to_csv(self, path):
        names = self.names
        data = np.column_stack([self.columns[n] for n in names])
        np.savetxt(path, data, fmt="%.10g", delimiter=",", header=",".join(names), comments="")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls({n: data[:, i].copy() for i, n in enumerate(header)})


# metrics ------------------------------------------------------------------------


@dataclass
class ResponseMetrics:
    rise_time: float
    nadir_hz: float
    steady_state_dev_hz: float
    settle_time: float
    overshoot_pct: float
    response_time: float
    baseline: float
    steady_change: float
    t10: float
    t90: float
    stable: bool = True

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_text(self):
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {v:.6g}" if isinstance(v, float) else f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _first_crossing(t, x, level, rising):
    hit = x >= level if rising else x <= level
    if not hit.any():
        return math.nan
    i = int(np.argmax(hit))
    if i == 0:
        return float(t[0])
    x0, x1 = x[i - 1], x[i]
    frac = (level - x0) / (x1 - x0) if x1 != x0 else 1.0
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def metrics(rec, event_t, channel="p_fc_poc_pu", window_end=None, f_nom=50.0,
            steady_tol=0.1, settle_band=0.05, min_change=1e-6, baseline_span=1.0, smooth=1.0):
    """Step response figures of `channel` for an event at event_t.

    The window runs from event_t to window_end (end of record by default).
    The steady level is the mean over the last 10% of the window and the
    baseline is the mean over the baseline_span seconds before the event.
    The tail counts as steady when its `smooth`-second moving average moves
    by less than steady_tol of the change, so measurement noise alone does
    not fail it but a sustained oscillation or drift does.
    """
    t = np.asarray(rec.t)
    x = np.asarray(rec[channel], dtype=float)
    f = np.asarray(rec["f_hz"], dtype=float) if "f_hz" in rec else None
    end = float(t[-1]) if window_end is None else float(window_end)
    if not t[0] <= event_t < end <= t[-1] + 1e-9:
        raise ValueError(f"event window [{event_t}, {end}] not inside the record")
    pre = (t < event_t) & (t >= event_t - baseline_span)
    baseline = float(x[pre].mean()) if pre.any() else float(x[t <= event_t][-1])
    win = (t >= event_t) & (t <= end + 1e-9)
    tw, xw = t[win], x[win]
    tail = tw >= end - 0.1 * (end - event_t)
    if not np.all(np.isfinite(xw)):
        raise NoSteadyState(f"{channel} is not finite after the event")
    steady = float(xw[tail].mean())
    change = steady - baseline
    if abs(change) <= min_change:
        raise NoResponse(f"{channel} shows no response to the event at {event_t} s")
    xt = xw[tail]
    step = float(np.median(np.diff(tw))) if len(tw) > 1 else 1.0
    n = max(1, min(len(xt), int(round(smooth / step))))
    avg = np.convolve(xt, np.ones(n) / n, mode="valid")
    spread = float(avg.max() - avg.min())
    if spread > steady_tol * abs(change):
        raise NoSteadyState(
            f"{channel} drifts by {spread:.3g} in the tail, more than {steady_tol:g} of the change {change:.3g}")
    rising = change > 0
    t10 = _first_crossing(tw, xw, baseline + 0.1 * change, rising)
    t90 = _first_crossing(tw, xw, baseline + 0.9 * change, rising)
    rise = max(t90 - t10, 0.0)
    dev = np.abs(xw - steady) > settle_band * abs(change)
    settle = float(tw[np.nonzero(dev)[0][-1]] - event_t) if dev.any() else 0.0
    peak = float(xw.max() - steady) if rising else float(steady - xw.min())
    overshoot = max(peak, 0.0) / abs(change) * 100.0
    if f is not None:
        fw = f[win]
        nadir = float(fw.min())
        ss_dev = float(fw[tail].mean() - f_nom)
    else:
        nadir = ss_dev = math.nan
    return ResponseMetrics(rise, nadir, ss_dev, settle, overshoot, t90 - event_t, baseline,
                           change, t10, t90, True)


def relative_rms(rec, ref, channel, t0, t1):
    """RMS of rec - ref over [t0, t1], relative to the RMS of ref's change from its value at t0."""
    t = np.asarray(ref.t)
    m = (t >= t0) & (t <= t1)
    a = np.asarray(rec[channel])[m]
    b = np.asarray(ref[channel])[m]
    i0 = int(np.argmax(t >= t0))
    base = float(np.asarray(ref[channel])[max(i0 - 1, 0)])
    scale = math.sqrt(float(np.mean((b - base) ** 2)))
    if scale == 0.0:
        raise NoResponse(f"reference {channel} does not move in [{t0}, {t1}]")
    return math.sqrt(float(np.mean((a - b) ** 2))) / scale


def default_event_window(sc):
    """First load step and the next later event (or the end of the run)."""
    event_t = sc.outputs.event_t
    if event_t is None:
        steps = [e.t for e in sc.events if e.kind == "load_step"]
        event_t = steps[0] if steps else (sc.events[0].t if sc.events else None)
    end = sc.outputs.window_end
    if end is None and event_t is not None:
        later = [e.t for e in sc.events if e.t > event_t + 1e-9]
        end = min(later) if later else sc.duration
    return event_t, end


# scenario assembly ----------------------------------------------------------------


def _actual_params(a, unc):
    if unc.corner:
        a = corner_params(a, unc.corner)
    if unc.param_overrides:
        a = replace(a, **unc.param_overrides)
    return a


def malfunction_mask(n, fraction, seed, index):
    """Which of n assets lose their FC function; round(fraction * n) of them."""
    k = int(round(fraction * n))
    mask = [False] * n
    if k == 0:
        return mask
    order = np.random.default_rng([seed, index]).permutation(n)
    for i in order[:k]:
        mask[int(i)] = True
    return mask


@dataclass
class _Plant:
    name: str
    config: object
    assets: list
    ratings: list
    settings: list
    controller: PlantController
    asset_links: list
    ref_link: object
    noise: NoiseSource
    y_ref0: float
    y: float = 0.0
    y_r: float = 0.0


def _carries(p, service):
    return p.bundle.reserves_up[service] > 0 or p.bundle.reserves_down[service] > 0


def centralized_settings(sc):
    """HPP-level FC settings (HPP pu) equivalent to the plants' own settings.

    Reserves add up. The droop acts on the summed rating of the assets that
    hold FCR reserve, so an unclamped response matches the distributed one.
    """
    plants = sc.plants
    if sc.hpp.bundle is not None:
        return sc.hpp.bundle.settings()
    up = tuple(sum(p.bundle.reserves_up[i] for p in plants) for i in range(3))
    down = tuple(sum(p.bundle.reserves_down[i] for p in plants) for i in range(3))
    fcr = [p for p in plants if _carries(p, FCR)] or plants
    ffr = [p for p in plants if _carries(p, FFR)] or plants
    droop_rating = sum(a.rating for p in fcr for a in p.assets)
    b_fcr, b_ffr = fcr[0].bundle, ffr[0].bundle
    return FcSettings(b_ffr.t_ffr, b_ffr.db_ffr, b_fcr.db_fcr, b_fcr.r_fcr / droop_rating, up, down)


def _shares(values):
    total = sum(values)
    return [v / total if total > 0 else 0.0 for v in values]


class Simulation:
    """One scenario, built and ready to advance."""

    def __init__(self, sc, design=None):
        self.sc = sc
        self.dt = dt = sc.dt
        self.design = design if design is not None else scenario_design(sc)
        self.grid = GridState(sc.grid)
        self.centralized = sc.mode == "centralized"
        unc = sc.uncertainty
        seed = sc.noise.seed
        hpp_on = sc.hpp.enabled
        self.plants = []
        for idx, pc_cfg in enumerate(sc.plants):
            ld = self.design.plants[pc_cfg.name]
            g_n = self.design.plant_models[pc_cfg.name]
            weights = dispatch_weights(pc_cfg.assets)
            ratings = [a.rating for a in pc_cfg.assets]
            bad = malfunction_mask(len(pc_cfg.assets), unc.malfunction_fraction, unc.seed, idx)
            assets, settings, links = [], [], []
            for j, a in enumerate(pc_cfg.assets):
                s = asset_settings(pc_cfg.bundle, weights[j] / a.rating)
                p0 = weights[j] * pc_cfg.bundle.p_ref / a.rating
                actual = _actual_params(a, unc)
                st = make_asset(actual, s, dt, p_ref=p0, malfunction=bad[j],
                                fc_enabled=not self.centralized)
                assets.append(st)
                settings.append(s)
                links.append(make_link(dt, sc.delays["plant_to_asset"], p0))
            lo = [a.rating * a.limits()[0] for a in pc_cfg.assets]
            hi = [a.rating * a.limits()[1] for a in pc_cfg.assets]
            frob = make_frob(g_n, ld.q, dt) if pc_cfg.strategy == "FROB" else None
            est = None
            if pc_cfg.strategy == "Feedforward":
                est = Strategy2Estimator(ratings, settings, tf_discretize(g_n, dt), sc.f_nom)
            ctrl = PlantController(ld.kp, ld.ki, 0.0, weights, ratings, lo, hi, pc_cfg.strategy,
                                   frob, est)
            y0 = pc_cfg.bundle.p_ref
            ctrl.initialize(y0)
            up = make_link(dt, sc.delays["hpp_to_plant"], y0)
            noise = NoiseSource([seed, 1, idx], sc.noise.amplitude, sc.noise.corner, dt)
            self.plants.append(_Plant(pc_cfg.name, pc_cfg, assets, ratings, settings, ctrl, links,
                                      up, noise, y0))

        self.base_refs = [p.y_ref0 for p in self.plants]
        self.hpp = None
        if hpp_on:
            hd = self.design.hpp
            loops = [plant_response(p.config, self.design.plant_models[p.name],
                                    self.design.plant_loops[p.name]) for p in self.plants]
            nominal = build_hpp_nominal(loops, dt)
            frob = MisoFrob(nominal, tf_discretize(hd.q.tf, dt))
            hc = HppController(hd.kp, hd.ki, list(self.base_refs), list(self.design.hpp_weights),
                               [p.config.frr_share for p in self.plants], frob, sc.mode,
                               f_nom=sc.f_nom)
            if self.centralized:
                hc.fc_settings = centralized_settings(sc)
                hc.ffr_weights = _shares([p.config.bundle.reserves_up[FFR] + p.config.bundle.reserves_down[FFR]
                                          for p in self.plants])
                hc.fcr_weights = _shares([p.config.bundle.reserves_up[FCR] + p.config.bundle.reserves_down[FCR]
                                          for p in self.plants])
            hc.initialize()
            self.hpp = hc
        self.p_hpp_ref = sc.hpp.p_ref if hpp_on else sum(self.base_refs)
        self.hpp_noise = NoiseSource([seed, 2], sc.noise.amplitude, sc.noise.corner, dt)
        self.p_hpp0 = sum(self.base_refs)
        self._columns = self._column_names()

    def _column_names(self):
        names = ["t_s", "f_hz", "p_hpp_pu", "p_hpp_ref_pu", "p_fc_poc_pu", "p_fc_cmd_pu",
                 "p_fc_estimate_pu", "p_hpp_est_pu"]
        for p in self.plants:
            n = p.name
            names += [f"p_{n}_pu", f"p_{n}_ffr_pu", f"p_{n}_fcr_pu", f"p_{n}_ref_pu", f"p_{n}_est_pu"]
        return names

    @property
    def column_names(self):
        return list(self._columns)

    def run(self):
        sc = self.sc
        dt = self.dt
        n_steps = int(round(sc.duration / dt))
        every = int(round(sc.outputs.record_interval / dt))
        n_rec = n_steps // every + 1
        cols = self._columns
        data = np.empty((n_rec, len(cols)))
        events = sc.events
        grid = self.grid
        f_nom = sc.f_nom
        share = sc.grid.hpp_share
        plants = self.plants
        hc = self.hpp
        p_hpp0 = self.p_hpp0
        d_asset = sc.delays["plant_to_asset"]
        d_plant = sc.delays["hpp_to_plant"]
        const_asset = d_asset.profile == "constant"
        const_plant = d_plant.profile == "constant"
        hpp_noise = self.hpp_noise
        row = 0
        channel = "grid"
        try:
            for k in range(n_steps + 1):
                t = k * dt
                if events:
                    apply_events(events, t, grid)
                f = f_nom * (1.0 + grid.df)
                p_frr = grid.p_frr_set
                T_a = d_asset.t_max if const_asset else d_asset.value(t)
                p_hpp = 0.0
                fc_cmd = 0.0
                est_sum = 0.0
                rec_plants = []
                for p in plants:
                    channel = p.name
                    y = 0.0
                    ffr = fcr = 0.0
                    sat = p.controller.saturated
                    for j, a in enumerate(p.assets):
                        ref = p.asset_links[j].read(t, T_a)
                        out, _ = asset_step(a, ref, f, a.settings, t, f_nom)
                        r = p.ratings[j]
                        y += r * out
                        ffr += r * a.last_ffr
                        fcr += r * a.last_fcr
                        sat[j] = a.saturated
                    p.y = y
                    p_hpp += y
                    rec_plants.append((y, ffr, fcr))
                # plant controllers
                T_p = d_plant.t_max if const_plant else d_plant.value(t)
                for p in plants:
                    channel = p.name
                    if hc is not None:
                        y_r = p.ref_link.read(t, T_p)
                    else:
                        y_r = p.y_ref0 + p.config.frr_share * p_frr
                    p.y_r = y_r
                    y_m = p.y + p.noise.next()
                    refs = plant_step(p.controller, y_r, y_m, dt, t, f)
                    for j, v in enumerate(refs):
                        p.asset_links[j].write(t, v)
                    est_sum += p.controller.estimate
                # HPP controller
                channel = "hpp"
                if hc is not None:
                    hc.p_frr_set = p_frr
                    y_m_hpp = p_hpp + hpp_noise.next()
                    urefs = hpp_step(hc, self.p_hpp_ref, y_m_hpp, dt, t, f)
                    for p, v in zip(plants, urefs):
                        p.ref_link.write(t, v)
                    sched = self.p_hpp_ref + p_frr
                    if self.centralized:
                        fc_cmd = hc.fc_command
                else:
                    sched = sum(p.y_r for p in plants)
                if not self.centralized:
                    fc_cmd = sum(ff + fr for _, ff, fr in rec_plants)
                if k % every == 0:
                    vals = [t, f, p_hpp, sched, p_hpp - sched, fc_cmd, est_sum,
                            hc.estimate if hc is not None else 0.0]
                    for i, (p, (y, ffr, fcr)) in enumerate(zip(plants, rec_plants)):
                        if self.centralized:
                            ffr = hc.last_ffr * hc.ffr_weights[i]
                            fcr = hc.last_fcr * hc.fcr_weights[i]
                        vals += [y, ffr, fcr, p.y_r, p.controller.estimate]
                    for name, v in zip(cols, vals):
                        if not math.isfinite(v):
                            raise NumericalDivergence(t, name, v)
                    data[row] = vals
                    row += 1
                channel = "grid"
                grid_step(grid, share * (p_hpp - p_hpp0), dt)
        except NonFiniteInput as exc:
            raise NumericalDivergence(t, channel, math.nan) from exc
        data = data[:row]
        record = TimeSeriesRecord({n: data[:, i] for i, n in enumerate(cols)},
                                  meta={"scenario": sc.name, "dt": dt})
        if sc.outputs.columns:
            keep = ["t_s"] + [c for c in sc.outputs.columns if c != "t_s"]
            missing = [c for c in keep if c not in record.columns]
            if missing:
                raise ValidationError("outputs.columns", f"unknown columns {', '.join(missing)}")
            record = TimeSeriesRecord({c: record.columns[c] for c in keep}, record.meta)
        return record


def run(sc, design=None):
    """Simulate a validated ScenarioConfig and return its TimeSeriesRecord."""
    return Simulation(sc, design).run()
