"""Free energy and ground-state energy of a single p-monomial of strength h.

    f_p(h) = sup_{q in [0,1)} 1/2 log(1 - q) + h (q/p)^{p/2}
    g_p(h) = h / p^{p/2}

:func:`f_grid` maximizes the objective directly; :func:`f_closed` solves the
stationarity equation in ``lam = q / (2p(1-q))``.  The two are independent
routes and are cross-checked in the tests.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalError

Q_MAX = 1.0 - 1e-6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MonomialValue:
    p: int
    h: float
    value: float
    qstar: float
    lam: float
    threshold: float


def objective(p: int, h: float, q):
    q = np.asarray(q, dtype=float)
    return 0.5 * np.log1p(-q) + h * (q / p) ** (p / 2)


def golden_max(fun, a: float, b: float, tol: float = 1e-10) -> tuple[float, float]:
    """Golden-section search for a maximum of a unimodal ``fun`` on [a, b]."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    fx = fun(x)
    return max((fx, x), (fc, c), (fd, d))[::-1]


def q_grid(n: int, q_max: float = Q_MAX) -> np.ndarray:
    """Uniform grid on [0, q_max] merged with points geometrically dense near 1."""
    gap = 1.0 - q_max
    near_one = 1.0 - np.geomspace(0.5, gap, max(n // 4, 2))
    return np.unique(np.concatenate([np.linspace(0.0, q_max, n), near_one]))


def local_maxima(values: np.ndarray, top: int = 3) -> list[int]:
    """Indices of the ``top`` largest discrete local maxima (ties go to smaller index)."""
    v = np.asarray(values)
    left = np.concatenate([[-np.inf], v[:-1]])
    right = np.concatenate([v[1:], [-np.inf]])
    cand = np.flatnonzero((v >= left) & (v >= right))
    order = sorted(cand, key=lambda i: (-v[i], i))
    return [int(i) for i in order[:top]]


def f_grid(p: int, h: float, grid: int = 2001) -> float:
    """Grid search plus golden-section refinement of the monomial objective."""
    if h <= 0:
        return 0.0
    qs = q_grid(grid)
    vals = objective(p, h, qs)
    best = 0.0
    for i in local_maxima(vals):
        lo, hi = qs[max(i - 1, 0)], qs[min(i + 1, len(qs) - 1)]
        _, fq = golden_max(lambda q: float(objective(p, h, q)), lo, hi, 1e-10)
        best = max(best, fq, float(vals[i]))
    return best


def _lam_equation(p: int, h: float, lam: float) -> float:
    return 2 * math.log(h) + (p - 2) * math.log(2 * lam) - p * math.log1p(2 * p * lam)


def _largest_root(p: int, h: float) -> float | None:
    """Largest positive root of the lambda equation, or None when there is none."""
    if h <= 0:
        return None
    if p == 2:
        return (h - 1) / 4 if h > 1 else None
    lam_peak = (p - 2) / (4 * p)
    if _lam_equation(p, h, lam_peak) < 0:
        return None
    hi = max(2 * lam_peak, 1.0)
    while _lam_equation(p, h, hi) > 0:
        hi *= 2
        if hi > 1e300:
            raise NumericalError(f"cannot bracket lambda root for p={p}, h={h}")
    if _lam_equation(p, h, lam_peak) == 0:
        return lam_peak
    try:
        return brentq(lambda x: _lam_equation(p, h, x), lam_peak, hi, xtol=1e-15, rtol=1e-15)
    except ValueError as exc:
        raise NumericalError(
            f"lambda root bracketing failed for p={p}, h={h}: [{lam_peak}, {hi}]"
        ) from exc


def _stationary_value(p: int, h: float) -> tuple[float, float] | None:
    lam = _largest_root(p, h)
    if lam is None:
        return None
    return 2 * lam - 0.5 * math.log1p(2 * p * lam), lam


_thresholds: dict[int, float] = {}
_threshold_lock = threading.Lock()


def threshold(p: int) -> float:
    """Smallest h with f_p(h) > 0, by bisection on the sign of the stationary value."""
    with _threshold_lock:
        if p in _thresholds:
            return _thresholds[p]
        if p == 2:
            h_star = 1.0
        else:
            def positive(h):
                sv = _stationary_value(p, h)
                return sv is not None and sv[0] > 0

            lo, hi = 0.0, 1.0
            while not positive(hi):
                lo, hi = hi, 2 * hi
            while hi - lo > 1e-12 * max(1.0, hi):
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if positive(mid) else (mid, hi)
            h_star = hi
        _thresholds[p] = h_star
        return h_star


def f_closed(p: int, h: float) -> MonomialValue:
    """f_p(h) from the larger root of the stationarity equation in lambda."""
    if p < 2 or h < 0:
        raise ValueError(f"need p >= 2 and h >= 0, got p={p}, h={h}")
    h_star = threshold(p)
    sv = _stationary_value(p, h)
    if sv is None or sv[0] <= 0:
        return MonomialValue(p, h, 0.0, 0.0, 0.0, h_star)
    value, lam = sv
    q = 2 * p * lam / (1 + 2 * p * lam)
    return MonomialValue(p, h, value, q, lam, h_star)


def f(p: int, h: float) -> float:
    return f_closed(p, h).value


def g(p: int, h: float) -> float:
    """Zero-temperature monomial energy ``h / p**(p/2)``."""
    return h / p ** (p / 2)


def stationarity_residual(p: int, h: float, q: float) -> float:
    return 1.0 / (1.0 - q) - h / p ** (p / 2) * p * q ** (p / 2 - 1)
