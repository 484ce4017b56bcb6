"""One-dimensional variational formula balancing slice entropy, bulk and spike energy.

For slice mass ``q`` carried by the spike coordinates,

    T(q) = 1/2 log(1 - q) + P(eta_q; beta) + E_nim(q),
    eta_q(t) = xi(q + (1 - q) t) - xi(q),

and the prediction for the free energy is ``sup_q T(q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nim
from .disorder import MixtureSpec
from .errors import ConfigError
from .nim import golden_max, local_maxima
from .parisi import MixtureFunction, OrderParameter, minimize_cs
from .spike_bulk import e_nim, nim_amplitudes
from .tails import ExtremeStat, TailScales

Q_MAX = 1.0 - 1e-4
Q_EVAL_MAX = 1.0 - 1e-6


def _no_starts(k: int) -> list[np.ndarray]:
    """Warm-started solves rely on the warm start alone (centre start as fallback)."""
    return []


def eta(xi: MixtureFunction, q: float) -> MixtureFunction:
    """Binomial expansion of ``xi(q + (1-q) t) - xi(q)`` in powers of ``t``."""
    if not 0.0 <= q < 1.0:
        raise ConfigError(f"q must lie in [0, 1), got {q}")
    out: dict[int, float] = {}
    r = 1.0 - q
    for p, c in xi.coeffs.items():
        for j in range(1, p + 1):
            out[j] = out.get(j, 0.0) + c * math.comb(p, j) * q ** (p - j) * r ** j
    return MixtureFunction(out)


def bulk_xi(spec: MixtureSpec, scales: Sequence[TailScales]) -> MixtureFunction:
    """Covariance mixture of the layers with a finite ratio ``c_p``.

    Each such layer contributes ``gamma_p**2 * Var(H_p)`` at power ``p``; the
    variance is 1 for finite-moment laws and ``alpha/(alpha-2)`` for Pareto.
    """
    coeffs: dict[int, float] = {}
    for layer, sc in zip(spec.layers, scales):
        if sc.c_finite:
            coeffs[layer.p] = coeffs.get(layer.p, 0.0) + layer.gamma ** 2 * layer.tail.variance()
    return MixtureFunction(coeffs)


@dataclass(frozen=True)
class TapObjective:
    q: float
    entropy: float
    bulk: float
    spike: float
    total: float

    def to_dict(self) -> dict:
        return {"q": self.q, "entropy": self.entropy, "bulk": self.bulk,
                "spike": self.spike, "total": self.total}


@dataclass
class TapDecomposition:
    """Optimum of the q-formula with the evaluated curve and spike amplitudes."""

    qstar: float
    best: TapObjective
    curve: list[TapObjective] = field(default_factory=list)
    amplitudes: list[tuple[float, int]] = field(default_factory=list)
    lambdas: list[float | None] = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.best.total

    def __iter__(self):
        yield self.qstar
        yield self.best

    def to_dict(self) -> dict:
        return {"qstar": self.qstar, "value": self.value, "best": self.best.to_dict(),
                "amplitudes": [list(a) for a in self.amplitudes], "lambdas": self.lambdas}


def _bulk_term(xi: MixtureFunction, beta: float, q: float, warm: OrderParameter | None,
               k_max: int, tol: float) -> tuple[float, OrderParameter]:
    if xi.is_zero or beta == 0:
        return 0.0, OrderParameter()
    e = eta(xi, q)
    if warm is None:
        res = minimize_cs(e, beta, k_max=k_max, tol=tol)
    else:
        res = minimize_cs(e, beta, k_max=k_max, tol=tol, warm_start=warm, starts=_no_starts,
                          quick=True)
    return res.value, res.minimizer


def _evaluate(xi, spec, lambdas, scales, beta, q, include_bulk, warm, k_max, tol):
    if not 0.0 <= q <= Q_EVAL_MAX:
        raise ConfigError(f"q must lie in [0, {Q_EVAL_MAX}], got {q}")
    entropy = 0.5 * math.log1p(-q)
    if include_bulk:
        bulk, x = _bulk_term(xi, beta, q, warm, k_max, tol)
    else:
        bulk, x = 0.0, OrderParameter()
    spike = e_nim(spec.with_beta(beta), lambdas, scales, q)
    return TapObjective(q, entropy, bulk, spike, entropy + bulk + spike), x


def tap_value(xi: MixtureFunction, spec: MixtureSpec, lambdas: Sequence[ExtremeStat | None],
              scales: Sequence[TailScales], beta: float, q: float, include_bulk: bool = True,
              k_max: int = 8, tol: float = 1e-7) -> TapObjective:
    """``1/2 log(1-q) + P(eta_q; beta) + E_nim(q)``; ``include_bulk=False`` drops the middle term."""
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    return _evaluate(xi, spec, lambdas, scales, beta, q, include_bulk, None, k_max, tol)[0]


def tap_grid(n: int = 200, q_max: float = Q_MAX) -> np.ndarray:
    """``n`` points on [0, q_max]: uniform up to 0.9, geometric toward ``q_max``."""
    n_near = max(n // 4, 2)
    head = np.linspace(0.0, 0.9, n - n_near, endpoint=False)
    tail = 1.0 - np.geomspace(0.1, 1.0 - q_max, n_near)
    return np.unique(np.concatenate([head, tail]))


def tap_optimize(xi: MixtureFunction, spec: MixtureSpec, lambdas: Sequence[ExtremeStat | None],
                 scales: Sequence[TailScales], beta: float, grid: int = 200,
                 q_max: float = Q_MAX, include_bulk: bool = True, k_max: int = 8,
                 tol: float = 1e-7, refine_tol: float = 1e-6) -> TapDecomposition:
    """Maximize the q-formula: grid scan, then golden-section refinement.

    The grid is augmented with the single-spike optima ``q*`` of each heavy
    layer.  Inner Parisi solves walk the grid upward, each warm-started at the
    previous minimizer; ``q = 0`` always gets a cold, full solve.  Ties go to
    the smallest ``q``.
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    spec_b = spec.with_beta(beta)
    amps = nim_amplitudes(spec_b, lambdas, scales)
    qs = list(tap_grid(grid, q_max))
    for a, p in amps:
        qn = nim.f_closed(p, a).qstar
        if 0.0 < qn <= q_max:
            qs.append(qn)
    qs = np.unique(np.asarray(qs))

    curve: list[TapObjective] = []
    minimizers: list[OrderParameter] = []
    warm = None
    for q in qs:
        obj, x = _evaluate(xi, spec, lambdas, scales, beta, float(q), include_bulk,
                           warm, k_max, tol)
        curve.append(obj)
        minimizers.append(x)
        warm = x

    totals = np.array([c.total for c in curve])
    best = min(curve, key=lambda c: (-c.total, c.q))
    for i in local_maxima(totals, top=3):
        lo, hi = float(qs[max(i - 1, 0)]), float(qs[min(i + 1, len(qs) - 1)])
        if hi - lo <= refine_tol:
            continue
        seen: dict[float, TapObjective] = {}

        def total(q, w=minimizers[i]):
            obj, _ = _evaluate(xi, spec, lambdas, scales, beta, q, include_bulk, w, k_max, tol)
            seen[q] = obj
            return obj.total

        golden_max(total, lo, hi, refine_tol)
        for obj in seen.values():
            if (-obj.total, obj.q) < (-best.total, best.q):
                best = obj
    return TapDecomposition(best.q, best, curve, amps,
                            [None if lam is None else lam.lam for lam in lambdas])


def spike_endpoint(spec: MixtureSpec, lambdas: Sequence[ExtremeStat | None],
                   scales: Sequence[TailScales], beta: float) -> float:
    """``sup_q {1/2 log(1-q) + E_nim(q)}``; equals ``f_p(beta w Lambda)`` for one heavy layer."""
    amps = nim_amplitudes(spec.with_beta(beta), lambdas, scales)
    return max((nim.f(p, a) for a, p in amps), default=0.0)
