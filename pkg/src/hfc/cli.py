"""Command line entry point: simulate, sweep, design, report.

Exit codes: 0 success, 2 invalid configuration, 3 numerical divergence,
4 at least one sweep run failed, 5 no feasible FROB filter.
"""
from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .analysis import (
    frob_closed_loops, loop_transfer, robust_check_delay, robust_check_params, template_q,
)
from .assets import all_corners, with_converter_params
from .config import ConfigErrors, load_config, parse_config
from .design import design_fragment, plant_model, scenario_design
from .errors import (
    HfcError, NoFeasibleFilter, NoResponse, NoSteadyState, NumericalDivergence, UnstableResult,
    ValidationError,
)
from .lti import TransferFunction, tf_eval
from .simkit import TimeSeriesRecord, default_event_window, metrics, run
from .svg import Panel, line_chart

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_SWEEP_FAILED, EXIT_NO_FILTER = 0, 2, 3, 4, 5
SWEEP_KEYS = ("delay", "hpp_delay", "mode", "strategy", "malfunction", "corner")
REPORT_FIELDS = ("run_id", "scenario", "mode", "strategy", "delay_s", "hpp_delay_s", "malfunction",
                 "corner", "rise_time_s", "response_time_s", "nadir_hz", "ss_dev_hz", "stable", "error")


def _err(msg):
    print(msg, file=sys.stderr)


def _load(path):
    """Raw config dict (seed override applied) and its validated form, or ConfigErrors."""
    try:
        raw = load_config(path)
    except OSError as exc:
        raise ConfigErrors([ValidationError("$", f"cannot read {path}: {exc.strerror}")]) from exc
    return raw, parse_config(raw)


def _report_config_errors(exc):
    for e in exc.errors:
        _err(f"invalid config: {e}")


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


# simulate -----------------------------------------------------------------------


def _metrics_text(rec, sc):
    event_t, end = default_event_window(sc)
    head = [f"scenario = {sc.name}", f"channel = {sc.outputs.metrics_channel}"]
    if event_t is None:
        return "\n".join(head + ["error = no event in scenario"]) + "\n", None
    if event_t >= min(end, sc.duration):
        return "\n".join(head + [f"error = event at {event_t:g} s is past the end of the run"]) + "\n", None
    head += [f"event_t = {event_t:g}", f"window_end = {end:g}"]
    try:
        m = metrics(rec, event_t, sc.outputs.metrics_channel, window_end=end, f_nom=sc.f_nom)
    except (NoResponse, NoSteadyState) as exc:
        return "\n".join(head + ["stable = False" if isinstance(exc, NoSteadyState) else "stable = True",
                                 f"error = {type(exc).__name__}: {exc}"]) + "\n", None
    return "\n".join(head) + "\n" + m.to_text(), m


def plot_record(rec, out_dir):
    t = rec.t
    plants = sorted({n[2:-3] for n in rec.names
                     if n.startswith("p_") and n.endswith("_pu") and f"{n[:-3]}_ref_pu" in rec})
    if "f_hz" in rec:
        line_chart(os.path.join(out_dir, "frequency.svg"), t, Panel({"f_hz": rec["f_hz"]}, "Hz"),
                   "Grid frequency", "t (s)")
    power = {}
    for name in ("p_hpp_pu", "p_hpp_ref_pu"):
        if name in rec:
            power[name] = rec[name]
    panels = [Panel(power, "HPP pu")] if power else []
    plant_series = {f"p_{p}_pu": rec[f"p_{p}_pu"] for p in plants if f"p_{p}_pu" in rec}
    if plant_series:
        panels.append(Panel(plant_series, "HPP pu"))
    if panels:
        line_chart(os.path.join(out_dir, "power.svg"), t, panels, "Active power", "t (s)")
    fc = {n: rec[n] for n in ("p_fc_poc_pu", "p_fc_cmd_pu", "p_fc_estimate_pu") if n in rec}
    split = {}
    for p in plants:
        for part in ("ffr", "fcr"):
            n = f"p_{p}_{part}_pu"
            if n in rec and np.any(rec[n] != 0):
                split[n] = rec[n]
    fc_panels = [Panel(fc, "HPP pu")] if fc else []
    if split:
        fc_panels.append(Panel(split, "HPP pu"))
    if fc_panels:
        line_chart(os.path.join(out_dir, "fc.svg"), t, fc_panels, "Frequency response", "t (s)")


def cmd_simulate(config_path, out_dir):
    try:
        raw, sc = _load(config_path)
    except ConfigErrors as exc:
        _report_config_errors(exc)
        return EXIT_INVALID
    try:
        rec = run(sc)
    except NoFeasibleFilter as exc:
        _err(f"design failed: {exc}")
        return EXIT_NO_FILTER
    except NumericalDivergence as exc:
        _err(f"simulation diverged: {exc}")
        return EXIT_DIVERGED
    except UnstableResult as exc:
        _err(f"design failed: {exc}")
        return EXIT_DIVERGED
    os.makedirs(out_dir, exist_ok=True)
    rec.to_csv(os.path.join(out_dir, "timeseries.csv"))
    text, _ = _metrics_text(rec, sc)
    with open(os.path.join(out_dir, "metrics.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(sc.to_dict(), fh, indent=2, default=str)
    plot_record(rec, out_dir)
    return EXIT_OK


# sweep ----------------------------------------------------------------------------


def parse_over(items):
    """['delay=0,0.1', 'mode=a,b'] -> [('delay', [0.0, 0.1]), ('mode', ['a', 'b'])]."""
    dims = []
    for item in items:
        if "=" not in item:
            raise ValueError(f"--over needs key=v1,v2,... (got {item!r})")
        key, values = item.split("=", 1)
        key = key.strip()
        if key not in SWEEP_KEYS:
            raise ValueError(f"cannot sweep over {key!r}; choose from {', '.join(SWEEP_KEYS)}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ValueError(f"no values given for {key}")
        if key in ("delay", "hpp_delay", "malfunction"):
            vals = [float(v) for v in vals]
        dims.append((key, vals))
    return dims


def apply_override(raw, key, value):
    raw = copy.deepcopy(raw)
    if key == "delay":
        raw.setdefault("delays", {})["plant_to_asset"] = {"profile": "constant", "t_max": value}
    elif key == "hpp_delay":
        raw.setdefault("delays", {})["hpp_to_plant"] = {"profile": "constant", "t_max": value}
    elif key == "mode":
        raw["mode"] = value
    elif key == "strategy":
        for p in raw.get("plants", []):
            p["strategy"] = value
    elif key == "malfunction":
        raw.setdefault("uncertainty", {})["malfunction_fraction"] = value
    elif key == "corner":
        raw.setdefault("uncertainty", {})["corner"] = None if value in ("none", "nominal") else value
    return raw


def _sweep_job(job):
    run_id, raw, combo, out_dir = job
    row = {k: "" for k in REPORT_FIELDS}
    row.update(run_id=run_id, scenario=raw.get("name", "scenario"))
    try:
        sc = parse_config(raw)
    except ConfigErrors as exc:
        row.update(error="ValidationError: " + "; ".join(str(e) for e in exc.errors), stable="")
        return row, False
    row.update(mode=sc.mode, strategy="/".join(sorted({p.strategy for p in sc.plants})),
               delay_s=sc.delays["plant_to_asset"].t_max, hpp_delay_s=sc.delays["hpp_to_plant"].t_max,
               malfunction=sc.uncertainty.malfunction_fraction,
               corner=sc.uncertainty.corner or "nominal")
    try:
        rec = run(sc)
    except HfcError as exc:
        row.update(error=f"{type(exc).__name__}: {exc}", stable=False)
        return row, False
    run_dir = os.path.join(out_dir, run_id)
    os.makedirs(run_dir, exist_ok=True)
    rec.to_csv(os.path.join(run_dir, "timeseries.csv"))
    text, m = _metrics_text(rec, sc)
    with open(os.path.join(run_dir, "metrics.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump(raw, fh, indent=2)
    if m is not None:
        row.update(rise_time_s=m.rise_time, response_time_s=m.response_time, nadir_hz=m.nadir_hz,
                   ss_dev_hz=m.steady_state_dev_hz, stable=True)
    else:
        err = [ln for ln in text.splitlines() if ln.startswith("error = ")]
        row.update(stable="stable = False" not in text, error=err[0][8:] if err else "")
    return row, True


def _fmt_cell(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_sweep(config_path, over, out_dir, jobs=1):
    try:
        raw, _ = _load(config_path)
    except ConfigErrors as exc:
        _report_config_errors(exc)
        return EXIT_INVALID
    try:
        dims = parse_over(over)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    os.makedirs(out_dir, exist_ok=True)
    keys = [k for k, _ in dims]
    work = []
    for i, combo in enumerate(itertools.product(*[v for _, v in dims])):
        r = raw
        for k, v in zip(keys, combo):
            r = apply_override(r, k, v)
        work.append((f"run{i:03d}", r, dict(zip(keys, combo)), out_dir))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, work))
    else:
        results = [_sweep_job(w) for w in work]
    rows = [r for r, _ in results]
    _write_rows(os.path.join(out_dir, "report.csv"),
                [REPORT_FIELDS] + [[_fmt_cell(r[k]) for k in REPORT_FIELDS] for r in rows])
    render_report(out_dir)
    return EXIT_OK if all(ok for _, ok in results) else EXIT_SWEEP_FAILED


# design ----------------------------------------------------------------------------


def _bode_rows(omega, curves):
    names = list(curves)
    header = ["omega_rad_s"] + [f"{n}_{part}" for n in names for part in ("mag_db", "phase_deg")]
    rows = [header]
    data = {n: bode_on(curves[n], omega) for n in names}
    for i, w in enumerate(omega):
        row = [f"{w:.9g}"]
        for n in names:
            mag, ph = data[n]
            row += [f"{mag[i]:.9g}", f"{ph[i]:.9g}"]
        rows.append(row)
    return rows, data


def bode_on(g, omega):
    h = tf_eval(g, omega)
    with np.errstate(divide="ignore"):
        mag = 20.0 * np.log10(np.abs(h))
    return mag, np.degrees(np.unwrap(np.angle(h)))


def _design_plots(out_dir, tag, omega, pdy, ny):
    for name, data in (("pdy", pdy), ("ny", ny)):
        line_chart(os.path.join(out_dir, f"bode_{name}_{tag}.svg"), omega,
                   [Panel({k: v[0] for k, v in data.items()}, "magnitude (dB)"),
                    Panel({k: v[1] for k, v in data.items()}, "phase (deg)")],
                   f"{'FC command to output' if name == 'pdy' else 'Noise to output'} ({tag})",
                   "omega (rad/s)", logx=True)


def _robust_plot(path, rep, title):
    line_chart(path, rep.omega_grid,
               Panel({"|M|": rep.m_mag, "|W|": rep.w_mag, "|1 + 1/L|": rep.margin_mag}, "magnitude",
                     logy=True), title, "omega (rad/s)", logx=True)


def cmd_design(config_path, out_dir):
    try:
        raw, sc = _load(config_path)
    except ConfigErrors as exc:
        _report_config_errors(exc)
        return EXIT_INVALID
    try:
        sd = scenario_design(sc)
    except NoFeasibleFilter as exc:
        _err(f"no feasible FROB filter: {exc}")
        _err(f"omega_resp = {sc.design.omega_resp:g} rad/s, omega_noise = {sc.design.omega_noise:g} rad/s; "
             "the response band must lie below the noise band")
        return EXIT_NO_FILTER
    except UnstableResult as exc:
        _err(f"design failed: {exc}")
        return EXIT_DIVERGED
    os.makedirs(out_dir, exist_ok=True)
    omega = np.logspace(-3, 3, 301)
    one = TransferFunction.gain(1.0)
    summary = [f"scenario = {sc.name}"]
    done = set()
    for p in sc.plants:
        g = sd.plant_models[p.name]
        ld = sd.plants[p.name]
        key = (g, ld)
        tag = p.name
        summary += [f"[{tag}]", f"kp = {ld.kp:.6g}", f"ki = {ld.ki:.6g}", f"q_degree = {ld.q_n}",
                    f"q_omega_c = {ld.q_omega_c:.6g}", f"bandwidth_hz = {ld.bandwidth_hz:.4g}",
                    f"phase_margin_deg = {ld.phase_margin_deg:.4g}",
                    f"phase_margin_target_met = {ld.pm_met}"]
        if key in done:
            summary.append("same model and design as an earlier plant")
            continue
        done.add(key)
        c = ld.c_p
        pdy = {"no_frob": frob_closed_loops(c, g, g, TransferFunction.gain(0.0), one, g).g_pdy}
        ny = {"no_frob": frob_closed_loops(c, g, g, TransferFunction.gain(0.0), one, g).g_ny}
        for n in (1, 2, 3):
            loops = frob_closed_loops(c, g, g, template_q(n, ld.q_omega_c), one, g)
            pdy[f"q{n}"], ny[f"q{n}"] = loops.g_pdy, loops.g_ny
        rows, pdy_data = _bode_rows(omega, pdy)
        _write_rows(os.path.join(out_dir, f"bode_pdy_{tag}.csv"), rows)
        rows, ny_data = _bode_rows(omega, ny)
        _write_rows(os.path.join(out_dir, f"bode_ny_{tag}.csv"), rows)
        _design_plots(out_dir, tag, omega, pdy_data, ny_data)

        l = loop_transfer(ld.q, c, g, g)
        rd = robust_check_delay(l, sc.design.t_max)
        samples = [plant_model([with_converter_params(a, cp) for a in p.assets]) for cp in all_corners(p.assets[0])]
        rp = robust_check_params(g, samples, l)
        _write_rows(os.path.join(out_dir, f"robust_delay_{tag}.csv"), rd.to_csv_rows())
        _write_rows(os.path.join(out_dir, f"robust_params_{tag}.csv"), rp.to_csv_rows())
        _robust_plot(os.path.join(out_dir, f"robust_delay_{tag}.svg"), rd, f"Delay uncertainty ({tag})")
        _robust_plot(os.path.join(out_dir, f"robust_params_{tag}.svg"), rp, f"Parameter uncertainty ({tag})")
        summary += [f"robust_delay_satisfied = {rd.satisfied}",
                    f"robust_delay_min_margin_ratio = {rd.min_margin_ratio:.6g}",
                    f"robust_params_satisfied = {rp.satisfied}",
                    f"robust_params_min_margin_ratio = {rp.min_margin_ratio:.6g}"]
    h = sd.hpp
    if h is not None:
        summary += ["[hpp]", f"kp = {h.kp:.6g}", f"ki = {h.ki:.6g}", f"q_degree = {h.q_n}",
                    f"q_omega_c = {h.q_omega_c:.6g}", f"bandwidth_hz = {h.bandwidth_hz:.4g}",
                    f"phase_margin_deg = {h.phase_margin_deg:.4g}"]
        l_h = loop_transfer(h.q, h.c_p, sd.hpp_model, sd.hpp_model)
        rd = robust_check_delay(l_h, sc.design.t_max)
        _write_rows(os.path.join(out_dir, "robust_delay_hpp.csv"), rd.to_csv_rows())
        _robust_plot(os.path.join(out_dir, "robust_delay_hpp.svg"), rd, "Delay uncertainty (hpp)")
        summary += [f"robust_delay_satisfied = {rd.satisfied}",
                    f"robust_delay_min_margin_ratio = {rd.min_margin_ratio:.6g}"]
    with open(os.path.join(out_dir, "design.json"), "w") as fh:
        json.dump({"design": design_fragment(sd)}, fh, indent=2)
    with open(os.path.join(out_dir, "design.txt"), "w") as fh:
        fh.write("\n".join(summary) + "\n")
    return EXIT_OK


# report ------------------------------------------------------------------------------


def _read_report(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_report(out_dir):
    """Re-render tables and plots from the CSVs already in out_dir."""
    rendered = []
    report = os.path.join(out_dir, "report.csv")
    if os.path.exists(report):
        rows = _read_report(report)
        cols = ["run_id", "mode", "strategy", "delay_s", "malfunction", "corner", "rise_time_s",
                "response_time_s", "nadir_hz", "stable", "error"]
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for r in rows:
            lines.append("| " + " | ".join(r.get(c, "") for c in cols) + " |")
        with open(os.path.join(out_dir, "report.md"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        rendered.append("report.md")
        series, t_ref = {}, None
        for r in rows:
            ts = os.path.join(out_dir, r["run_id"], "timeseries.csv")
            if not os.path.exists(ts):
                continue
            rec = TimeSeriesRecord.from_csv(ts)
            if "p_fc_poc_pu" not in rec:
                continue
            if t_ref is None:
                t_ref = rec.t
            if len(rec.t) == len(t_ref):
                label = f"{r['run_id']} {r['mode']} {r['strategy']} d={r['delay_s']}"
                series[label] = rec["p_fc_poc_pu"]
        if series:
            _write_rows(os.path.join(out_dir, "comparison.csv"),
                        [["t_s"] + list(series)] +
                        [[f"{t:.10g}"] + [f"{s[i]:.10g}" for s in series.values()]
                         for i, t in enumerate(t_ref)])
            line_chart(os.path.join(out_dir, "comparison.svg"), t_ref, Panel(series, "HPP pu"),
                       "FC at PoC across runs", "t (s)")
            rendered.append("comparison.svg")
    ts = os.path.join(out_dir, "timeseries.csv")
    if os.path.exists(ts):
        plot_record(TimeSeriesRecord.from_csv(ts), out_dir)
        rendered.append("timeseries plots")
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("bode_") and name.endswith(".csv"):
            _rerender_bode(os.path.join(out_dir, name))
            rendered.append(name[:-4] + ".svg")
        elif name.startswith("robust_") and name.endswith(".csv"):
            data = np.loadtxt(os.path.join(out_dir, name), delimiter=",", skiprows=1, ndmin=2)
            line_chart(os.path.join(out_dir, name[:-4] + ".svg"), data[:, 0],
                       Panel({"|M|": data[:, 1], "|W|": data[:, 2], "|1 + 1/L|": data[:, 3]}, "magnitude",
                             logy=True), name[:-4], "omega (rad/s)", logx=True)
            rendered.append(name[:-4] + ".svg")
    return rendered


def _rerender_bode(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    mags = {h[:-7]: data[:, i] for i, h in enumerate(header) if h.endswith("_mag_db")}
    phases = {h[:-10]: data[:, i] for i, h in enumerate(header) if h.endswith("_phase_deg")}
    line_chart(path[:-4] + ".svg", data[:, 0],
               [Panel(mags, "magnitude (dB)"), Panel(phases, "phase (deg)")],
               os.path.basename(path)[:-4], "omega (rad/s)", logx=True)


def cmd_report(out_dir):
    if not os.path.isdir(out_dir):
        _err(f"no such directory: {out_dir}")
        return EXIT_INVALID
    rendered = render_report(out_dir)
    if not rendered:
        _err(f"nothing to render in {out_dir}")
        return EXIT_INVALID
    for r in rendered:
        print(r)
    return EXIT_OK


# entry point --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="hfc", description="Hierarchical frequency control of hybrid power plants")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True)
    p = sub.add_parser("sweep", help="run the cartesian product of scenario variations")
    p.add_argument("config")
    p.add_argument("--over", action="append", default=[], metavar="KEY=V1,V2",
                   help=f"sweep dimension, KEY in {', '.join(SWEEP_KEYS)}")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("-j", "--jobs", type=int, default=1)
    p = sub.add_parser("design", help="tune the controllers and check robustness")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True)
    p = sub.add_parser("report", help="re-render tables and plots from CSVs")
    p.add_argument("dir")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.over, args.out, args.jobs)
    if args.command == "design":
        return cmd_design(args.config, args.out)
    return cmd_report(args.dir)


if __name__ == "__main__":
    sys.exit(main())
