"""Adaptive Simpson quadrature."""

from __future__ import annotations

import math
from typing import Callable, Sequence

_MAX_DEPTH = 60


def _eval(f, x):
    y = float(f(x))
    if not math.isfinite(y):
        raise ValueError(f"integrand is not finite at x={x!r} (value {y!r})")
    return y


def _simpson_mid(f, a, fa, b, fb, fm, whole, tol, depth):
    # sub-interval whose midpoint value is already known
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = _eval(f, lm)
    frm = _eval(f, rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if depth <= 1 or abs(delta) <= 15.0 * (tol / 2.0):
        return left + right + delta / 15.0
    return _simpson_mid(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1) + _simpson_mid(
        f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1
    )


def quadrature(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-10,
    breakpoints: Sequence[float] = (),
) -> float:
    """Integrate ``f`` over ``[lo, hi]`` by adaptive Simpson.

    Parameters
    ----------
    f : callable
        Scalar integrand, bounded on the interval.
    lo, hi : float
        Integration limits; ``hi < lo`` flips the sign.
    tol : float
        Absolute tolerance, at least 1e-12.
    breakpoints : sequence of float
        Points where ``f`` or its derivatives jump. The interval is split
        there and the tolerance shared in proportion to length.

    Returns
    -------
    float

    Raises
    ------
    ValueError
        On a non-finite evaluation or a tolerance below 1e-12.
    """
    if tol < 1e-12:
        raise ValueError("tol must be at least 1e-12")
    lo = float(lo)
    hi = float(hi)
    if hi == lo:
        return 0.0
    if hi < lo:
        return -quadrature(f, hi, lo, tol, breakpoints)
    cuts = sorted({lo, hi, *(float(p) for p in breakpoints if lo < p < hi)})
    total = []
    length = hi - lo
    for a, b in zip(cuts[:-1], cuts[1:]):
        share = tol * (b - a) / length
        fa = _eval(f, a)
        fb = _eval(f, b)
        # start one level down so that symmetric integrands are not misjudged
        m = 0.5 * (a + b)
        fm = _eval(f, m)
        whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        total.append(_simpson_mid(f, a, fa, b, fb, fm, whole, share, _MAX_DEPTH))
    return math.fsum(total)
