"""Frequency-domain design and verification of the FROB loop.

Covers Bode data, the closed loops seen by a plant controller with a FROB,
the Q filter selection procedure, PI tuning and the two robust stability
checks (parameter drift and communication delay).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import DegreeOutOfRange, NoFeasibleFilter, UnstableResult, WeightFitFailure
from .lti import TransferFunction, tf_connect, tf_eval

MAX_DEGREE = 6

# Butterworth polynomials in ascending powers of the normalised variable
# s/omega_c, built from the pole angles so any degree up to MAX_DEGREE works.


def butterworth_poly(n):
    if not 1 <= n <= MAX_DEGREE:
        raise DegreeOutOfRange(f"filter degree {n} outside 1..{MAX_DEGREE}")
    k = np.arange(1, n + 1)
    poles = np.exp(1j * np.pi * (2 * k + n - 1) / (2 * n))
    desc = np.real(np.poly(poles))
    asc = [float(c) for c in desc[::-1]]
    asc[0] = asc[-1] = 1.0
    return tuple(asc)


def default_grid(points=400, lo=1e-3, hi=1e3):
    return np.logspace(math.log10(lo), math.log10(hi), points)


@dataclass
class BodeData:
    omega: np.ndarray
    mag_db: np.ndarray
    phase_deg: np.ndarray

    @property
    def grid(self):
        return list(zip(self.omega.tolist(), self.mag_db.tolist(), self.phase_deg.tolist()))

    def to_csv_rows(self):
        return [("omega_rad_s", "mag_db", "phase_deg")] + [
            (f"{w:.9g}", f"{m:.9g}", f"{p:.9g}") for w, m, p in self.grid
        ]


def bode(g, omega_min, omega_max, points_per_decade=50):
    if not 0 < omega_min < omega_max:
        raise ValueError("need 0 < omega_min < omega_max")
    decades = math.log10(omega_max / omega_min)
    n = max(2, int(math.ceil(decades * points_per_decade)) + 1)
    w = np.logspace(math.log10(omega_min), math.log10(omega_max), n)
    h = tf_eval(g, w)
    with np.errstate(divide="ignore"):
        mag = 20.0 * np.log10(np.abs(h))
    phase = np.degrees(np.unwrap(np.angle(h)))
    return BodeData(w, mag, phase)


# Q filters ----------------------------------------------------------------


@dataclass(frozen=True)
class QFilter:
    n: int
    omega_c: float
    tf: TransferFunction
    structure: str = "template"


def butterworth_q(n, omega_c):
    """Pure low-pass: 1 over the degree-n Butterworth polynomial in s/omega_c."""
    if not omega_c > 0:
        raise ValueError("omega_c must be positive")
    b = butterworth_poly(n)
    den = tuple(c / omega_c**m for m, c in enumerate(b))
    return QFilter(n, float(omega_c), TransferFunction((1.0,), den), "butterworth")


def template_q(n, omega_c):
    """Q = (1 + sum_{m<n} f_m s^m) / (1 + sum_{m<=n} f_m s^m) with Butterworth f_m.

    Numerator and denominator share every coefficient except the top one, so
    1 - Q = f_n s^n / den: the residual grows as (omega/omega_c)^n and the
    pass band widens with the degree.
    """
    if not omega_c > 0:
        raise ValueError("omega_c must be positive")
    b = butterworth_poly(n)
    den = tuple(c / omega_c**m for m, c in enumerate(b))
    return QFilter(n, float(omega_c), TransferFunction(den[:-1], den), "template")


# FROB closed loops --------------------------------------------------------


@dataclass(frozen=True)
class FrobLoopSet:
    g_yry: TransferFunction
    g_pdy: TransferFunction
    g_ny: TransferFunction
    delta: TransferFunction


def _as_tf(q):
    return q.tf if isinstance(q, QFilter) else q


def frob_closed_loops(c_p, g, g_n, q, c_a2, g_a):
    """Reference, FC-command and noise transfers of a FROB-equipped loop.

    Delta = 1 + Q C_p G_n - Q C_p G + C_p G is assembled as
    (1 + C_p G) + Q C_p (G_n - G) so that the model-mismatch term vanishes
    exactly when G_n and G are the same polynomials.
    """
    q = _as_tf(q)
    cg = c_p * g
    qc = q * c_p
    mismatch = qc * (g_n - g)
    delta = (1.0 + cg) + mismatch
    if delta.is_zero:
        from .errors import ZeroDenominator

        raise ZeroDenominator("closed loop denominator is identically zero")
    g_yry = cg / delta
    g_pdy = (c_a2 * g_a) * ((1.0 + qc * g_n) / delta)
    g_ny = -((1.0 - q) * (cg / delta))
    return FrobLoopSet(g_yry, g_pdy, g_ny, delta)


def loop_transfer(q, c_p, g, g_n):
    """Loop seen by a perturbation of G: L = (1-Q) C_p G / (1 + Q G_n C_p)."""
    q = _as_tf(q)
    return ((1.0 - q) * (c_p * g)) / (1.0 + q * (g_n * c_p))


def pi_tf(kp, ki):
    return TransferFunction((ki, kp), (0.0, 1.0))


# pointwise versions used inside the searches; cheaper and better
# conditioned than evaluating the composed high order polynomials


def _loops_pointwise(qw, cw, gw, gnw, aw):
    delta = 1.0 + cw * gw + qw * cw * (gnw - gw)
    pdy = aw * (1.0 + qw * cw * gnw) / delta
    ny = -(1.0 - qw) * cw * gw / delta
    return pdy, ny


def _band_edge(ok, w):
    """Highest grid frequency below which every point satisfies `ok`."""
    if not ok[0]:
        return 0.0
    if ok.all():
        return float(w[-1])
    return float(w[np.argmin(ok) - 1])


@dataclass
class QBands:
    n: int
    omega_c: float
    acceptance_edge: float
    attenuation_edge: float


def filter_bands(q, g_n, c_p, c_a2, g_a, eps_acc=0.05, eps_noise=0.1, omega=None):
    """Band edges of a Q on a nominal design (G = G_n).

    acceptance: residual counteraction |G_pdy - C_A2 G_A| relative to the
    counteraction without a FROB stays within eps_acc.
    attenuation: |G_ny| relative to the noise path without a FROB stays
    below eps_noise.
    """
    w = default_grid() if omega is None else np.asarray(omega)
    qw = tf_eval(_as_tf(q), w)
    cw, gw, aw = tf_eval(c_p, w), tf_eval(g_n, w), tf_eval(c_a2 * g_a, w)
    pdy, ny = _loops_pointwise(qw, cw, gw, gw, aw)
    pdy0, ny0 = _loops_pointwise(0.0, cw, gw, gw, aw)
    acc = np.abs(pdy - aw) <= eps_acc * np.abs(pdy0 - aw)
    att = np.abs(ny) <= eps_noise * np.abs(ny0)
    qq = q if isinstance(q, QFilter) else QFilter(0, math.nan, q)
    return QBands(qq.n, qq.omega_c, _band_edge(acc, w), _band_edge(att, w))


# widening by less than a tenth of a decade does not count as an improvement
BAND_STEP = 10.0**0.1


def q_select(g_n, c_p, c_a2, g_a, omega_noise, omega_resp, eps_acc=0.05, eps_noise=0.1,
             omega=None, search_decades=2.0, steps_per_decade=20):
    """Degree and cut-off of the FROB filter, following the degree-raising procedure.

    1. n = 1 and omega_c starts at omega_noise.
    2. omega_c is raised along a log grid until G_pdy stays within eps_acc
       of the FC path C_A2 G_A up to omega_resp and the peak noise gain above
       omega_noise is at least 1/eps_noise below the no-FROB noise path.
    3. With omega_c fixed, n is raised while both the acceptance band and
       the attenuation band widen by at least a tenth of a decade.
    """
    if not (0 < omega_resp < omega_noise):
        raise NoFeasibleFilter(
            f"response band edge {omega_resp} must lie below the noise frequency {omega_noise}"
        )
    w = default_grid() if omega is None else np.asarray(omega)
    cw, gw, aw = tf_eval(c_p, w), tf_eval(g_n, w), tf_eval(c_a2 * g_a, w)
    _, ny0 = _loops_pointwise(0.0, cw, gw, gw, aw)
    resp = w <= omega_resp
    noise = w >= omega_noise
    if not resp.any() or not noise.any():
        raise NoFeasibleFilter("frequency grid does not cover both bands")
    ny0_peak = np.abs(ny0[noise]).max()

    def feasible(qf):
        qw = tf_eval(qf.tf, w)
        pdy, ny = _loops_pointwise(qw, cw, gw, gw, aw)
        unity = np.all(np.abs(pdy[resp] / aw[resp] - 1.0) <= eps_acc)
        quiet = np.abs(ny[noise]).max() <= eps_noise * ny0_peak
        return bool(unity and quiet)

    omega_c = None
    for k in range(int(search_decades * steps_per_decade) + 1):
        cand = omega_noise * 10.0 ** (k / steps_per_decade)
        if feasible(template_q(1, cand)):
            omega_c = cand
            break
    if omega_c is None:
        raise NoFeasibleFilter("no cut-off frequency meets the band criteria at degree 1")

    best = template_q(1, omega_c)
    bands = filter_bands(best, g_n, c_p, c_a2, g_a, eps_acc, eps_noise, w)
    for n in range(2, MAX_DEGREE + 1):
        cand = template_q(n, omega_c)
        nb = filter_bands(cand, g_n, c_p, c_a2, g_a, eps_acc, eps_noise, w)
        wider = (nb.acceptance_edge >= bands.acceptance_edge * BAND_STEP
                 and nb.attenuation_edge >= bands.attenuation_edge * BAND_STEP)
        if not wider or not feasible(cand):
            break
        best, bands = cand, nb
    return best


# PI tuning ----------------------------------------------------------------


@dataclass
class PiTuning:
    kp: float
    ki: float
    bandwidth_hz: float
    phase_margin_deg: float
    pm_met: bool

    def __iter__(self):
        return iter((self.kp, self.ki))


def _bandwidths(t_mag, w):
    """First -3 dB crossing of each row of |T|, log-interpolated; nan if none."""
    below = t_mag < 1.0 / math.sqrt(2.0)
    idx = np.argmax(below, axis=1)
    has = below[np.arange(len(idx)), idx] & (idx > 0)
    bw = np.full(len(idx), np.nan)
    i = idx[has]
    rows = np.nonzero(has)[0]
    m0 = 20 * np.log10(t_mag[rows, i - 1])
    m1 = 20 * np.log10(t_mag[rows, i])
    target = -10 * math.log10(2.0)
    frac = (m0 - target) / (m0 - m1)
    lw = np.log10(w[i - 1]) + frac * (np.log10(w[i]) - np.log10(w[i - 1]))
    bw[rows] = 10**lw
    return bw


def _margins(l_mag, l_phase, w):
    """Phase margin at the first gain crossover of each row; nan if none."""
    above = l_mag >= 1.0
    cross = above[:, :-1] & ~above[:, 1:]
    idx = np.argmax(cross, axis=1)
    has = cross[np.arange(len(idx)), idx]
    pm = np.full(len(idx), np.nan)
    rows = np.nonzero(has)[0]
    i = idx[rows]
    a0, a1 = np.log10(l_mag[rows, i]), np.log10(l_mag[rows, i + 1])
    frac = a0 / (a0 - a1)
    ph = l_phase[rows, i] + frac * (l_phase[rows, i + 1] - l_phase[rows, i])
    pm[rows] = 180.0 + ph
    return pm


def _evaluate_pairs(kp, ki, gw, g_phase, w):
    c = kp[:, None] + ki[:, None] / (1j * w[None, :])
    lw = c * gw[None, :]
    l_mag = np.abs(lw)
    l_phase = np.degrees(np.angle(c)) + g_phase[None, :]
    t_mag = np.abs(lw / (1.0 + lw))
    return _bandwidths(t_mag, w), _margins(l_mag, l_phase, w)


def _closed_loop_stable(g, kp, ki):
    c = pi_tf(kp, ki)
    cl = tf_connect(c * g, TransferFunction.gain(1.0), "feedback")
    return cl.is_stable()


def pi_tune(plant_open, bw_target, pm_target, bw_tol=0.02):
    """Grid search for PI gains giving a closed-loop -3 dB bandwidth of bw_target Hz.

    Among stabilising pairs whose bandwidth is within bw_tol of the target, the
    pair with the largest phase margin is returned; pm_met reports whether it
    reaches pm_target.
    """
    if not bw_target > 0:
        raise ValueError("bw_target must be positive")
    wt = 2 * math.pi * bw_target
    w = np.logspace(math.log10(wt) - 3, math.log10(wt) + 3, 481)
    gw = tf_eval(plant_open, w)
    g_phase = np.degrees(np.unwrap(np.angle(gw)))

    def search(kp_axis, ki_axis):
        kp, ki = np.meshgrid(kp_axis, ki_axis, indexing="ij")
        kp, ki = kp.ravel(), ki.ravel()
        bw, pm = _evaluate_pairs(kp, ki, gw, g_phase, w)
        return kp, ki, bw / (2 * math.pi), pm

    kp, ki, bw, pm = search(np.logspace(-3, 2, 101), np.logspace(-3, 3, 121))
    err = np.abs(bw - bw_target) / bw_target
    ok = np.isfinite(err) & np.isfinite(pm)
    if not ok.any():
        raise UnstableResult("no PI pair produced a finite bandwidth and margin")
    # refine around the coarse pairs close to the target
    near = np.nonzero(ok & (err < 0.25))[0]
    if near.size:
        kp_lo, kp_hi = kp[near].min() / 1.2, kp[near].max() * 1.2
        ki_lo, ki_hi = ki[near].min() / 1.2, ki[near].max() * 1.2
        kp2, ki2, bw2, pm2 = search(np.geomspace(kp_lo, kp_hi, 121), np.geomspace(ki_lo, ki_hi, 121))
        kp, ki = np.concatenate([kp, kp2]), np.concatenate([ki, ki2])
        bw, pm = np.concatenate([bw, bw2]), np.concatenate([pm, pm2])
        err = np.abs(bw - bw_target) / bw_target
        ok = np.isfinite(err) & np.isfinite(pm)

    match = ok & (err <= bw_tol)
    if match.any():
        feas = match & (pm >= pm_target)
        if feas.any():
            order = np.lexsort((-pm, err))
            cand = [i for i in order if feas[i]]
        else:
            order = np.lexsort((err, -pm))
            cand = [i for i in order if match[i]]
    else:
        order = np.lexsort((-pm, err))
        cand = [i for i in order if ok[i]]
    for i in cand:
        if _closed_loop_stable(plant_open, kp[i], ki[i]):
            return PiTuning(float(kp[i]), float(ki[i]), float(bw[i]), float(pm[i]),
                            bool(pm[i] >= pm_target))
    raise UnstableResult("no stabilising PI pair found on the search grid")


# robust stability -----------------------------------------------------------


@dataclass
class RobustnessReport:
    omega_grid: np.ndarray
    m_mag: np.ndarray
    w_mag: np.ndarray
    margin_mag: np.ndarray
    satisfied: bool
    min_margin_ratio: float
    weight: TransferFunction = field(default=None)

    def to_csv_rows(self):
        rows = [("omega_rad_s", "m_mag", "w_mag", "margin_mag")]
        for w, m, ww, g in zip(self.omega_grid, self.m_mag, self.w_mag, self.margin_mag):
            rows.append((f"{w:.9g}", f"{m:.9g}", f"{ww:.9g}", f"{g:.9g}"))
        return rows


def _margin(l, w):
    lw = tf_eval(l, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(1.0 + 1.0 / lw)
    return np.where(lw == 0, np.inf, out)


def _report(w, m_mag, weight, l):
    w_mag = np.abs(tf_eval(weight, w))
    margin = _margin(l, w)
    with np.errstate(divide="ignore"):
        ratio = margin / w_mag
    min_ratio = float(np.min(ratio))
    satisfied = bool(min_ratio > 1.0)
    return RobustnessReport(w, m_mag, w_mag, margin, satisfied, min_ratio, weight)


def delay_envelope(w, t_max):
    """sup over T in [0, t_max] of |exp(-j w T) - 1|."""
    return 2.0 * np.sin(np.minimum(w * t_max / 2.0, math.pi / 2.0))


def delay_weight(k, t_max):
    return TransferFunction((0.0, k * t_max), (1.0, t_max / 3.5))


def robust_check_delay(l, t_max, omega_grid=None, k_max=10.0, margin=1.01):
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    w = default_grid() if omega_grid is None else np.asarray(omega_grid, dtype=float)
    env = delay_envelope(w, t_max)
    unit = np.abs(tf_eval(delay_weight(1.0, t_max), w))
    k = float(np.max(env / unit)) * margin
    if not k <= k_max:
        raise WeightFitFailure(f"delay weight needs k = {k:.3g} > {k_max}")
    weight = delay_weight(k, t_max)
    return _report(w, env, weight, l)


def lead_weight(k, omega_z, omega_p):
    return TransferFunction((k, k / omega_z), (1.0, 1.0 / omega_p))


def robust_check_params(g_a_nominal, g_a_samples, l, omega_grid=None, margin=1.01):
    if not g_a_samples:
        raise ValueError("need at least one perturbed sample")
    w = default_grid() if omega_grid is None else np.asarray(omega_grid, dtype=float)
    gn = tf_eval(g_a_nominal, w)
    env = np.zeros_like(w)
    for g in g_a_samples:
        if g == g_a_nominal:
            continue
        env = np.maximum(env, np.abs(tf_eval(g, w) / gn - 1.0))

    peak = float(env.max())
    if peak == 0.0:
        weight = TransferFunction.gain(1e-9)
        return _report(w, env, weight, l)

    floor = peak * 1e-12
    target = np.log(np.maximum(env, floor))

    lo_w, hi_w = math.log(w[0] / 10.0), math.log(w[-1] * 10.0)

    def model(p):
        k, wz, wp = np.exp(p[0]), np.exp(p[1]), np.exp(p[1] + p[2])
        s = 1j * w
        return np.log(k) + np.log(np.abs(1 + s / wz)) - np.log(np.abs(1 + s / wp))

    k0 = max(float(env[0]), floor)
    x0 = np.array([math.log(k0), 0.5 * (lo_w + hi_w), 1.0])
    bounds = ([-np.inf, lo_w, 0.0], [np.inf, hi_w, hi_w - lo_w])
    try:
        fit = least_squares(lambda p: model(p) - target, x0, bounds=bounds, method="trf")
        p = fit.x
    except Exception as exc:  # scipy raises assorted numerical errors
        raise WeightFitFailure(f"lead weight fit failed: {exc}") from exc
    if not np.all(np.isfinite(p)):
        raise WeightFitFailure("lead weight fit returned non-finite parameters")
    wz, wp = math.exp(p[1]), math.exp(p[1] + p[2])
    shape = np.abs(tf_eval(lead_weight(1.0, wz, wp), w))
    k = float(np.max(env / shape)) * margin
    if not (math.isfinite(k) and k > 0):
        raise WeightFitFailure("lead weight could not be scaled above the envelope")
    return _report(w, env, lead_weight(k, wz, wp), l)
