"""Continuous transfer functions, block algebra and Tustin discretization.

Polynomials are stored as tuples of floats in ascending powers of s, so
``(1.0, 2.0)`` is ``1 + 2s``. Trailing zero coefficients are dropped on
construction. Nothing is rounded or tolerance-stripped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ImproperSystem, NonFiniteInput, PoleOnGrid, TustinSingularity, ZeroDenominator

_POLE_TOL = 1e-12


def _canon(coeffs):
    c = [float(x) for x in np.atleast_1d(np.asarray(coeffs, dtype=float))]
    if not all(math.isfinite(x) for x in c):
        raise NonFiniteInput("polynomial coefficients must be finite")
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    if not c:
        c = [0.0]
    return tuple(c)


def _is_zero(poly):
    return len(poly) == 1 and poly[0] == 0.0


def _mul(a, b):
    return _canon(P.polymul(a, b))


def _add(a, b):
    return _canon(P.polyadd(a, b))


def _horner(poly, s):
    acc = 0.0 * s
    for c in reversed(poly):
        acc = acc * s + c
    return acc


@dataclass(frozen=True)
class TransferFunction:
    """Rational function num(s)/den(s) with ascending coefficients."""

    num: tuple
    den: tuple

    def __post_init__(self):
        num = _canon(self.num)
        den = _canon(self.den)
        if _is_zero(den):
            raise ZeroDenominator("denominator polynomial is identically zero")
        if _is_zero(num):
            num = (0.0,)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @classmethod
    def gain(cls, k):
        return cls((k,), (1.0,))

    @property
    def order(self):
        return len(self.den) - 1

    @property
    def is_proper(self):
        return _is_zero(self.num) or len(self.num) <= len(self.den)

    @property
    def is_zero(self):
        return _is_zero(self.num)

    def poles(self):
        return P.polyroots(self.den) if self.order > 0 else np.array([])

    def zeros(self):
        return P.polyroots(self.num) if len(self.num) > 1 else np.array([])

    def is_stable(self):
        p = self.poles()
        return bool(np.all(p.real < 0.0))

    def dc_gain(self):
        if self.den[0] == 0.0:
            return math.inf if self.num[0] != 0.0 else math.nan
        return self.num[0] / self.den[0]

    def __call__(self, s):
        return _horner(self.num, s) / _horner(self.den, s)

    def _lift(self, other):
        if isinstance(other, TransferFunction):
            return other
        return TransferFunction.gain(float(other))

    def __mul__(self, other):
        other = self._lift(other)
        if self.is_zero or other.is_zero:
            return TransferFunction((0.0,), (1.0,))
        return TransferFunction(_mul(self.num, other.num), _mul(self.den, other.den))

    __rmul__ = __mul__

    def __add__(self, other):
        other = self._lift(other)
        if other.is_zero:
            return self
        if self.is_zero:
            return other
        if self.den == other.den:
            # equal denominators add without growing the order
            return TransferFunction(_add(self.num, other.num), self.den)
        num = _add(_mul(self.num, other.den), _mul(other.num, self.den))
        return TransferFunction(num, _mul(self.den, other.den))

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(tuple(-c for c in self.num), self.den)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __truediv__(self, other):
        other = self._lift(other)
        if other.is_zero:
            raise ZeroDenominator("division by a zero transfer function")
        if self == other:
            return TransferFunction.gain(1.0)
        if self.den == other.den:
            return TransferFunction(self.num, other.num)
        return TransferFunction(_mul(self.num, other.den), _mul(self.den, other.num))


def tf(num, den):
    return TransferFunction(tuple(num), tuple(den))


def tf_connect(a, b, mode):
    """Compose two blocks: 'series' a*b, 'parallel' a+b, 'feedback' a/(1+a*b)."""
    if mode == "series":
        return a * b
    if mode == "parallel":
        return a + b
    if mode == "feedback":
        den = _add(_mul(a.den, b.den), _mul(a.num, b.num))
        if _is_zero(den):
            raise ZeroDenominator("closed loop denominator is identically zero")
        if a.is_zero:
            return TransferFunction((0.0,), (1.0,))
        return TransferFunction(_mul(a.num, b.den), den)
    raise ValueError(f"unknown connection mode {mode!r}")


def tf_eval(g, omega):
    """Frequency response g(j*omega); omega may be a scalar or an array."""
    w = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(w)):
        raise NonFiniteInput("frequency grid must be finite")
    s = 1j * w
    den = _horner(g.den, s)
    if np.any(np.abs(den) < _POLE_TOL):
        raise PoleOnGrid("transfer function has a pole on the evaluation grid")
    out = _horner(g.num, s) / den
    return complex(out) if np.ndim(out) == 0 else out


# discretization --------------------------------------------------------


def _real_factors(roots, scale):
    """Split roots into monic real factors of degree 1 and 2 (ascending)."""
    tol = 1e-9 * max(1.0, scale)
    lin, quad = [], []
    for r in roots:
        if abs(r.imag) <= tol:
            lin.append((-r.real, 1.0))
        elif r.imag > 0:
            quad.append((abs(r) ** 2, -2.0 * r.real, 1.0))
    lin.sort(key=lambda f: abs(f[0]))
    return lin, quad


def _band_numerator(num, bound):
    """Drop top coefficients that are negligible for |s| <= bound.

    Such terms are zeros far beyond the Tustin band; they map to z = -1
    like any missing zero, and keeping them wrecks the root finding of the
    remaining zeros.
    """
    num = tuple(num)
    while len(num) > 1:
        terms = [abs(c) * bound**k for k, c in enumerate(num)]
        if terms[-1] > 1e-14 * max(terms):
            break
        num = num[:-1]
    return num


def _tustin_section(num, den, k2):
    m = len(den) - 1

    def poly_z(c):
        out = np.zeros(m + 1)
        for k, ck in enumerate(c):
            term = np.array([ck * k2**k])
            for _ in range(k):
                term = P.polymul(term, [1.0, -1.0])
            for _ in range(m - k):
                term = P.polymul(term, [1.0, 1.0])
            out[: len(term)] += term
        return out

    b = poly_z(num)
    a = poly_z(den)
    return b / a[0], a / a[0]


def _compile_cascade(sections, gain, state):
    """Straight-line update for one section cascade, coefficients inlined.

    Same arithmetic as looping over the sections, about twice as fast,
    which matters in the per-step simulation loop. `state` is captured by
    reference so in-place resets stay visible.
    """
    lines = ["def step(u):", "    s = state", f"    x = u * {float(gain)!r}"]
    for order, *c, i in sections:
        b0, b1, b2, a1, a2 = (float(v) for v in c)
        lines.append(f"    y = {b0!r} * x + s[{i}]")
        if order == 2:
            lines.append(f"    s[{i}] = {b1!r} * x - {a1!r} * y + s[{i + 1}]")
            lines.append(f"    s[{i + 1}] = {b2!r} * x - {a2!r} * y")
        else:
            lines.append(f"    s[{i}] = {b1!r} * x - {a1!r} * y")
        lines.append("    x = y")
    lines.append("    return x")
    ns = {"state": state}
    exec("\n".join(lines), ns)
    return ns["step"]


@dataclass
class DiscreteFilter:
    """Cascade of first/second order sections in transposed direct form II.

    ``b`` and ``a`` expose the overall polynomials in z^-1 (a[0] == 1);
    ``state`` has one entry per pole.
    """

    b: tuple
    a: tuple
    dt: float
    sections: tuple
    gain: float
    state: list

    def __post_init__(self):
        self.step_unchecked = _compile_cascade(self.sections, self.gain, self.state)

    def step(self, u):
        if not math.isfinite(u):
            raise NonFiniteInput(f"filter input {u!r} is not finite")
        return self.step_unchecked(u)

    def dc_gain(self):
        k = self.gain
        for order, b0, b1, b2, a1, a2, i in self.sections:
            k *= (b0 + b1 + b2) / (1.0 + a1 + a2)
        return k

    def reset(self, u0=0.0):
        """Put every section at the steady state for a constant input u0."""
        s = self.state
        x = u0 * self.gain
        for order, b0, b1, b2, a1, a2, i in self.sections:
            den = 1.0 + a1 + a2
            if den == 0.0:
                if x != 0.0:
                    raise ValueError("cannot initialise an integrating section at a nonzero input")
                y = 0.0
            else:
                y = x * (b0 + b1 + b2) / den
            if order == 2:
                s[i + 1] = b2 * x - a2 * y
                s[i] = b1 * x - a1 * y + s[i + 1]
            else:
                s[i] = b1 * x - a1 * y
            x = y
        return x


def filter_step(f, u):
    return f.step(u)


def tf_discretize(g, dt):
    """Tustin (bilinear) discretization, realised as a section cascade.

    The DC gain of the result equals g(0) up to rounding when g(0) is finite
    and nonzero.
    """
    if not (dt > 0.0 and math.isfinite(dt)):
        raise ValueError("dt must be positive and finite")
    if not g.is_proper:
        raise ImproperSystem("numerator degree exceeds denominator degree")
    k2 = 2.0 / dt
    mag = sum(abs(c) * k2**i for i, c in enumerate(g.den))
    if abs(_horner(g.den, k2)) <= 1e-12 * mag:
        raise TustinSingularity("pole at s = 2/dt maps to z = infinity")

    n = g.order
    if g.is_zero or n == 0:
        k = 0.0 if g.is_zero else g.num[0] / g.den[0]
        return DiscreteFilter((k,), (1.0,), dt, (), k, [])

    scale = max(abs(c) for c in g.den) / abs(g.den[-1])
    plin, pquad = _real_factors(g.poles(), scale)
    num_band = _band_numerator(g.num, 10.0 * k2)
    # exact zeros at the origin are kept exact so a zero DC gain stays zero
    k0 = next(i for i, c in enumerate(num_band) if c != 0.0)
    rest = num_band[k0:]
    zeros = P.polyroots(rest) if len(rest) > 1 else []
    zlin, zquad = _real_factors(zeros, scale) if len(rest) > 1 else ([], [])
    zlin = [(0.0, 1.0)] * k0 + zlin

    # section = [den_factor, num_factor]; fit complex zero pairs first
    secs = [[q, (1.0,)] for q in pquad] + [[l, (1.0,)] for l in plin]
    for zq in zquad:
        for sec in secs:
            if len(sec[0]) == 3 and sec[1] == (1.0,):
                sec[1] = zq
                break
        else:
            free = [sec for sec in secs if len(sec[0]) == 2 and sec[1] == (1.0,)]
            s1, s2 = free[0], free[1]
            # by identity: repeated poles give equal sections
            del secs[next(i for i, sec in enumerate(secs) if sec is s2)]
            s1[0] = tuple(P.polymul(s1[0], s2[0]))
            s1[1] = zq
    for zl in zlin:
        for sec in secs:
            if len(sec[0]) - len(sec[1]) >= 1:
                sec[1] = tuple(P.polymul(sec[1], zl))
                break

    dc_ref = g.dc_gain()
    dc_sec = 1.0
    for den, num in secs:
        dc_sec *= num[0] / den[0] if den[0] != 0.0 else math.nan
    # sections are monic, so the leading coefficients give the gain; the DC
    # match replaces it when the two agree, making g(0) exact after rounding
    gain = num_band[-1] / g.den[-1]
    if math.isfinite(dc_ref) and dc_ref != 0.0 and math.isfinite(dc_sec) and dc_sec != 0.0:
        if abs(dc_ref / dc_sec / gain - 1.0) < 1e-6:
            gain = dc_ref / dc_sec

    sections = []
    state_len = 0
    b_all, a_all = np.array([1.0]), np.array([1.0])
    for den, num in secs:
        m = len(den) - 1
        b, a = _tustin_section(num, den, k2)
        b = np.concatenate([b, np.zeros(m + 1 - len(b))])
        b_all = P.polymul(b_all, b)
        a_all = P.polymul(a_all, a)
        b = [float(x) for x in b]
        a = [float(x) for x in a]
        if m == 2:
            sections.append((2, b[0], b[1], b[2], a[1], a[2], state_len))
        else:
            sections.append((1, b[0], b[1], 0.0, a[1], 0.0, state_len))
        state_len += m
    b_all = b_all * gain
    return DiscreteFilter(
        tuple(float(x) for x in b_all), tuple(float(x) for x in a_all), dt, tuple(sections), float(gain), [0.0] * state_len
    )
