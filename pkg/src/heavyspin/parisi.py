"""Crisanti-Sommers functional over k-RSB order parameters.

With ``Theta = beta^2 xi`` and ``xhat(q) = int_q^1 x``,

    P_CS(x) = 1/2 [Theta'(0) xhat(0) + int_0^1 Theta'' xhat
                   + int_0^qhat dq / xhat + log(1 - qhat)].

Every piece is integrated exactly on the linear segments of ``xhat``.  The
Parisi value is the infimum over step functions ``x``; by default it is
reported without the ``1/beta`` prefactor, so that ``x == 1`` gives the
annealed value ``beta^2 xi(1) / 2`` (``convention="per_beta"`` divides by beta).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize

from .errors import ConfigError

log = logging.getLogger(__name__)

QHAT_MAX = 1.0 - 1e-6


class MixtureFunction:
    """Polynomial ``xi(t) = sum_p c_p t^p`` with nonnegative coefficients, ``c_0 = 0``."""

    def __init__(self, coeffs: Mapping[int, float]):
        clean = {int(p): float(c) for p, c in coeffs.items() if float(c) != 0.0}
        for p, c in clean.items():
            if p < 1:
                raise ConfigError(f"mixture powers must be >= 1, got {p}")
            if c < 0:
                raise ConfigError(f"mixture coefficients must be >= 0, got {c} at t^{p}")
        self.coeffs = dict(sorted(clean.items()))
        deg = max(self.coeffs, default=0)
        self.poly = np.zeros(deg + 1)
        for p, c in self.coeffs.items():
            self.poly[p] = c
        self.d1 = P.polyder(self.poly) if deg else np.zeros(1)
        self.d2 = P.polyder(self.poly, 2) if deg > 1 else np.zeros(1)

    @classmethod
    def from_array(cls, poly) -> "MixtureFunction":
        return cls({k: c for k, c in enumerate(poly) if k >= 1})

    @classmethod
    def parse(cls, text: str) -> "MixtureFunction":
        """Parse ``"p:weight,p:weight"``."""
        out: dict[int, float] = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            try:
                p, w = item.split(":")
                out[int(p)] = out.get(int(p), 0.0) + float(w)
            except ValueError as exc:
                raise ConfigError(f"bad mixture term {item!r}; expected p:weight") from exc
        return cls(out)

    def coeff_lists(self) -> tuple[list[float], list[float]]:
        """Plain-float coefficient lists of ``xi`` and ``xi'`` (fast scalar evaluation)."""
        return [float(v) for v in self.poly], [float(v) for v in self.d1]

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def __call__(self, t):
        return P.polyval(t, self.poly)

    def prime(self, t):
        return P.polyval(t, self.d1)

    def second(self, t):
        return P.polyval(t, self.d2)

    def scaled(self, factor: float) -> "MixtureFunction":
        return MixtureFunction({p: factor * c for p, c in self.coeffs.items()})

    def __repr__(self) -> str:
        terms = " + ".join(f"{c:g} t^{p}" for p, c in self.coeffs.items()) or "0"
        return f"MixtureFunction({terms})"

    def to_dict(self) -> dict:
        return {str(p): c for p, c in self.coeffs.items()}


@dataclass(frozen=True)
class OrderParameter:
    """Step function: ``x = ms[j]`` on ``[qs[j-1], qs[j])`` (``qs[-1] := 0``), 1 on ``[qhat, 1]``."""

    qs: tuple[float, ...] = ()
    ms: tuple[float, ...] = ()

    def __post_init__(self):
        qs = tuple(float(v) for v in self.qs)
        ms = tuple(float(v) for v in self.ms)
        if len(qs) != len(ms):
            raise ConfigError("need one level per breakpoint")
        if any(b < a for a, b in zip((0.0,) + qs, qs)):
            raise ConfigError(f"breakpoints must be nondecreasing in [0, 1): {qs}")
        if any(b < a for a, b in zip((0.0,) + ms, ms + (1.0,))):
            raise ConfigError(f"levels must be nondecreasing in [0, 1]: {ms}")
        if qs and qs[-1] >= 1.0:
            raise ConfigError("qhat must be < 1 (xhat vanishes at qhat = 1)")
        object.__setattr__(self, "qs", qs)
        object.__setattr__(self, "ms", ms)

    @classmethod
    def replica_symmetric(cls) -> "OrderParameter":
        return cls()

    @property
    def k(self) -> int:
        return len(self.qs)

    @property
    def qhat(self) -> float:
        return self.qs[-1] if self.qs else 0.0

    def x(self, q: float) -> float:
        for qj, mj in zip(self.qs, self.ms):
            if q < qj:
                return mj
        return 1.0

    def xhat_knots(self) -> np.ndarray:
        """``xhat`` at ``0, q_1, ..., q_k``."""
        qs = np.array((0.0,) + self.qs)
        ms = np.array(self.ms)
        out = np.empty(len(qs))
        out[-1] = 1.0 - self.qhat
        for j in range(len(ms) - 1, -1, -1):
            out[j] = out[j + 1] + ms[j] * (qs[j + 1] - qs[j])
        return out

    def xhat(self, q: float) -> float:
        if q >= self.qhat:
            return 1.0 - q
        knots = self.xhat_knots()
        edges = (0.0,) + self.qs
        for j in range(self.k):
            if q < edges[j + 1]:
                return float(knots[j + 1] + self.ms[j] * (edges[j + 1] - q))
        raise AssertionError("unreachable")

    def to_dict(self) -> dict:
        return {"q": list(self.qs), "m": list(self.ms)}


def _horner(c: list[float], t: float) -> float:
    acc = 0.0
    for v in reversed(c):
        acc = acc * t + v
    return acc


def _cs(qs, ms, c0: list[float], c1: list[float], b2: float) -> float:
    """Scalar core of :func:`cs_value`; ``c0, c1`` are xi and xi' coefficients."""
    k = len(qs)
    qhat = qs[-1] if k else 0.0
    # xhat at the right end of each step, walking down from qhat
    right = 1.0 - qhat
    total = 0.0
    inv = 0.0
    b = 1.0
    a = qhat
    # final segment [qhat, 1]: xhat = 1 - q
    d1a, d1b = _horner(c1, a), _horner(c1, b)
    total += (d1b - d1a) - ((b * d1b - _horner(c0, b)) - (a * d1a - _horner(c0, a)))
    for j in range(k - 1, -1, -1):
        b = qs[j]
        a = qs[j - 1] if j else 0.0
        m = ms[j]
        dq = b - a
        if dq <= 0.0:
            continue
        # on [a, b]: xhat(q) = right + m (b - q) = A + B q
        A = right + m * b
        d1a, d1b = _horner(c1, a), _horner(c1, b)
        total += A * (d1b - d1a) - m * ((b * d1b - _horner(c0, b)) - (a * d1a - _horner(c0, a)))
        inv += dq / right if m == 0.0 else math.log1p(m * dq / right) / m
        right += m * dq
    total += c1[0] * right if c1 else 0.0
    return 0.5 * (b2 * total + inv + math.log1p(-qhat))


def cs_value(x: OrderParameter, xi: MixtureFunction, beta: float) -> float:
    """Crisanti-Sommers functional ``P_CS(x; beta^2 xi)``, integrated exactly.

    On each step ``[a, b]`` of ``x`` the antiderivative
    ``int Theta'' (A + B q) = A Theta' + B (q Theta' - Theta)`` is used, and
    ``int dq / xhat`` is the exact logarithm (or ``dq / xhat`` on flat steps).
    """
    return _cs(x.qs, x.ms, *xi.coeff_lists(), beta * beta)


def cs_value_rs(xi: MixtureFunction, beta: float) -> float:
    """Value at ``x == 1``: ``beta^2 xi(1) / 2``."""
    return 0.5 * beta * beta * float(xi(1.0))


@dataclass
class ParisiValue:
    value: float
    minimizer: OrderParameter
    k_used: int
    per_k: list[float] = field(default_factory=list)
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "value": self.value, "minimizer": self.minimizer.to_dict(), "k_used": self.k_used,
            "per_k": list(self.per_k), "converged": self.converged,
        }


def _decode_lists(theta, k: int) -> tuple[list[float], list[float]]:
    """Box coordinates in [0,1]^{2k} to ordered breakpoint and level lists.

    ``theta[0]`` scales qhat; ``theta[1:k]`` are successive ratios q_j / q_{j+1};
    ``theta[k]`` is m_k and ``theta[k+1:]`` are ratios m_j / m_{j+1}.
    """
    t = [min(1.0, max(0.0, float(v))) for v in theta]
    qs = [0.0] * k
    ms = [0.0] * k
    qs[-1] = QHAT_MAX * t[0]
    ms[-1] = t[k]
    for j in range(k - 2, -1, -1):
        qs[j] = qs[j + 1] * t[k - 1 - j]
        ms[j] = ms[j + 1] * t[2 * k - 1 - j]
    return qs, ms


def _decode(theta, k: int) -> OrderParameter:
    qs, ms = _decode_lists(theta, k)
    return OrderParameter(tuple(qs), tuple(ms))


def _encode(x: OrderParameter, k: int) -> np.ndarray:
    """Inverse of :func:`_decode`, embedding a shallower order parameter if needed."""
    qs, ms = list(x.qs), list(x.ms)
    if not qs:
        qs, ms = [0.5 * QHAT_MAX], [0.5]
    while len(qs) < k:
        # split the first step: degenerate, same function
        qs.insert(0, 0.5 * qs[0])
        ms.insert(0, ms[0])
    qs, ms = qs[-k:], ms[-k:]
    theta = np.empty(2 * k)
    theta[0] = qs[-1] / QHAT_MAX
    theta[k] = ms[-1]
    for j in range(k - 2, -1, -1):
        theta[k - 1 - j] = qs[j] / qs[j + 1] if qs[j + 1] > 0 else 0.5
        theta[2 * k - 1 - j] = ms[j] / ms[j + 1] if ms[j + 1] > 0 else 0.5
    return np.clip(theta, 0.0, 1.0)


def _start_grid(k: int) -> list[np.ndarray]:
    starts = []
    for qh in (0.3, 0.7, 0.95):
        for mk in (0.25, 0.75):
            t = np.full(2 * k, 0.5)
            t[0], t[k] = qh, mk
            starts.append(t)
    return starts


_PRECISE = ((1e-11, 1e-14), (1e-12, 1e-15))
_QUICK = ((1e-9, 1e-13),)


def _local_search(fun, theta0: np.ndarray, max_iter: int,
                  passes=_PRECISE) -> tuple[np.ndarray, float, bool]:
    """Bounded Nelder-Mead, restarted from its own optimum for each extra pass.

    Restarting guards against a collapsed simplex stalling early.
    """
    n = len(theta0)
    x, fx, ok = np.asarray(theta0, dtype=float), math.inf, False
    for xatol, fatol in passes:
        res = minimize(fun, x, method="Nelder-Mead", bounds=[(0.0, 1.0)] * n,
                       options={"xatol": xatol, "fatol": fatol, "maxiter": max_iter,
                                "maxfev": 2 * max_iter, "adaptive": n > 4})
        ok |= bool(res.success)
        if res.fun <= fx:
            x, fx = res.x, float(res.fun)
    return x, fx, ok


def minimize_cs(xi: MixtureFunction, beta: float, k_max: int = 8, tol: float = 1e-7,
                warm_start: OrderParameter | None = None, max_iter: int = 4000,
                starts: Callable[[int], list[np.ndarray]] | None = None,
                quick: bool = False) -> ParisiValue:
    """Minimize over k-RSB order parameters for k = 0, 1, ..., k_max.

    Each depth runs a bounded Nelder-Mead simplex search from a fixed start
    grid plus the embedded previous optimum (and ``warm_start``); ``starts``
    maps a depth to a replacement start list.  ``quick`` uses one looser
    simplex pass per start (for inner solves that are warm-started).  Per-depth
    values are reported as running minima; the search stops once going one
    level deeper improves by less than ``tol``.
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    if k_max < 0:
        raise ConfigError(f"k_max must be >= 0, got {k_max}")
    best_x = OrderParameter()
    best_v = cs_value(best_x, xi, beta)
    per_k = [best_v]
    if beta == 0 or xi.is_zero:
        return ParisiValue(best_v, best_x, 0, per_k)
    converged = True
    k_used = 0
    c0, c1 = xi.coeff_lists()
    b2 = beta * beta
    for k in range(1, k_max + 1):
        fun = lambda th, k=k: _cs(*_decode_lists(th, k), c0, c1, b2)
        candidates = [_encode(best_x, k)] if best_x.k else []
        if warm_start is not None and warm_start.k and min(warm_start.ms) < 1.0:
            candidates.append(_encode(warm_start, k))
        candidates += (starts or _start_grid)(k)
        if not candidates:
            candidates = [np.full(2 * k, 0.5)]
        level_v, level_x = math.inf, None
        for th0 in candidates:
            th, v, ok = _local_search(fun, th0, max_iter, _QUICK if quick else _PRECISE)
            converged &= ok
            x = _decode(th, k)
            key = (v, x.qs, x.ms)
            if level_x is None or key < (level_v, level_x.qs, level_x.ms):
                level_v, level_x = v, x
        previous = per_k[-1]
        # demand more than rounding noise before preferring a deeper level
        if level_v < best_v - 1e-15 * max(1.0, abs(best_v)):
            best_v, best_x, k_used = level_v, level_x, k
        per_k.append(best_v)
        if previous - best_v < tol:
            break
    if not converged:
        warnings.warn(f"Crisanti-Sommers minimization hit its iteration budget (beta={beta}, {xi})",
                      RuntimeWarning, stacklevel=2)
    return ParisiValue(best_v, best_x, k_used, per_k, converged)


def parisi_value(xi: MixtureFunction, beta: float, convention: str = "annealed",
                 k_max: int = 8, tol: float = 1e-7, warm_start: OrderParameter | None = None) -> float:
    """Gaussian Parisi value ``P(xi; beta)``.

    ``convention="annealed"`` (default) returns ``inf_x P_CS(x; beta^2 xi)``;
    ``"per_beta"`` returns the same divided by ``beta``.
    """
    res = minimize_cs(xi, beta, k_max=k_max, tol=tol, warm_start=warm_start)
    if convention == "annealed":
        return res.value
    if convention == "per_beta":
        if beta == 0:
            raise ConfigError("the 1/beta convention is undefined at beta = 0")
        return res.value / beta
    raise ConfigError(f"unknown convention {convention!r}")
