"""Tail laws, extreme-value scales and heavy-tailed sampling.

Heavy-tailed layers use the symmetric Pareto law with constant slowly varying
part, ``P(|X| > u) = min(1, u**-alpha)``.  Finite-moment layers are standard
Gaussian or Rademacher.

Convention for the factorial factors: a coupling tensor stores one base draw
``H_p`` per multiset of indices.  The quantile scale ``d`` is the level
exceeded by ``sqrt(p!) * |H_p|`` with probability ``1/M``, and ``Lambda`` is
the maximum of ``sqrt(p!) * |H_p| / d`` over index tuples without repeats
(equivalently the largest monomial coefficient divided by ``d``).  With these
choices ``Lambda`` is asymptotically Frechet(alpha) and the ground state of a
single dominant monomial equals ``g_p(Lambda)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError

if TYPE_CHECKING:
    from .disorder import CouplingTensor

INT64_MAX = np.iinfo(np.int64).max


class Regime(str, enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL_HEAVY = "critical_heavy"
    CRITICAL_LIGHT = "critical_light"
    FINITE_MOMENT = "finite_moment"

    @property
    def extreme_scaled(self) -> bool:
        """True when the layer is normalized by the extreme-value scale ``d``."""
        return self in (Regime.SUBCRITICAL, Regime.CRITICAL_HEAVY)


@dataclass(frozen=True)
class TailLaw:
    """Disorder law of one layer.

    ``kind`` is ``"heavy"`` (symmetric Pareto with index ``alpha``) or
    ``"finite"`` (``dist`` is ``"gaussian"`` or ``"rademacher"``).
    """

    kind: str
    alpha: float | None = None
    dist: str | None = None

    def __post_init__(self):
        if self.kind == "heavy":
            if self.alpha is None or not (self.alpha > 0 and math.isfinite(self.alpha)):
                raise ConfigError(f"heavy tail needs a finite alpha > 0, got {self.alpha!r}")
        elif self.kind == "finite":
            if self.dist not in ("gaussian", "rademacher"):
                raise ConfigError(f"unknown finite-moment law {self.dist!r}")
        else:
            raise ConfigError(f"unknown tail kind {self.kind!r}")

    @classmethod
    def heavy(cls, alpha: float) -> "TailLaw":
        return cls("heavy", alpha=float(alpha))

    @classmethod
    def gaussian(cls) -> "TailLaw":
        return cls("finite", dist="gaussian")

    @classmethod
    def rademacher(cls) -> "TailLaw":
        return cls("finite", dist="rademacher")

    @property
    def is_heavy(self) -> bool:
        return self.kind == "heavy"

    def variance(self) -> float:
        """Variance of a base draw (``inf`` for Pareto with alpha <= 2)."""
        if not self.is_heavy:
            return 1.0
        return self.alpha / (self.alpha - 2.0) if self.alpha > 2.0 else math.inf

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.is_heavy:
            return sample_heavy(rng, self.alpha, size)
        if self.dist == "gaussian":
            return rng.standard_normal(size)
        return rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0

    def to_dict(self) -> dict:
        if self.is_heavy:
            return {"kind": "heavy", "alpha": self.alpha}
        return {"kind": "finite", "dist": self.dist}

    @classmethod
    def from_dict(cls, d: dict) -> "TailLaw":
        if d["kind"] == "heavy":
            return cls.heavy(d["alpha"])
        return cls("finite", dist=d["dist"])

    def __str__(self) -> str:
        return f"heavy(alpha={self.alpha:g})" if self.is_heavy else self.dist


@dataclass(frozen=True)
class TailScales:
    """Normalization data for one layer at size ``N``.

    ``d`` and ``c`` are ``None`` for finite-moment laws.
    """

    N: int
    p: int
    M: int
    d: float | None
    c: float | None
    b: float
    regime: Regime

    @property
    def c_finite(self) -> bool:
        """Whether the layer has a finite limit ratio ``c_p`` (it feeds the bulk)."""
        return not self.regime.extreme_scaled

    def weight(self) -> float:
        """Factor multiplying ``Lambda`` in the spike energy: ``c`` or 1."""
        if self.regime.extreme_scaled:
            return 1.0
        if self.c is None:
            raise ConfigError("finite-moment layers carry no spike weight")
        return self.c

    def to_dict(self) -> dict:
        return {
            "N": self.N, "p": self.p, "M": self.M, "d": self.d, "c": self.c,
            "b": self.b, "regime": self.regime.value,
        }


@dataclass(frozen=True)
class ExtremeStat:
    """Rescaled maximal coupling of a heavy layer; ``argmax_tuple`` is 0-based."""

    lam: float
    argmax_tuple: tuple[int, ...] | None
    alpha: float


def num_multisets(N: int, p: int) -> int:
    """Number of multisets of size ``p`` drawn from ``N`` indices."""
    if N < 1 or p < 2:
        raise ConfigError(f"need N >= 1 and p >= 2, got N={N}, p={p}")
    m = math.comb(N + p - 1, p)
    if m > INT64_MAX:
        raise OverflowError(f"C({N + p - 1}, {p}) does not fit in a 64-bit integer")
    return m


def tail_probability(tail: TailLaw, t: float, p: int) -> float:
    """``P(sqrt(p!) |H_p| > t)`` for a heavy-tailed base draw."""
    if not tail.is_heavy:
        raise ConfigError("tail probability is only tabulated for heavy tails")
    u = t / math.sqrt(math.factorial(p))
    return 1.0 if u <= 1.0 else u ** (-tail.alpha)


def _critical_ratio(p: int, N: int) -> float:
    """``c_N`` for the Pareto law at alpha = 2p."""
    M = math.comb(N + p - 1, p)
    return math.sqrt(math.factorial(p)) * M ** (1.0 / (2 * p)) / math.sqrt(N)


def critical_is_light(p: int, cutoff: float = 10.0, k_max: int = 20) -> bool:
    """Classify alpha = 2p by the sequence ``c_N`` over ``N = 2**k``.

    Light (finite ``c_p``) when the sequence is nonincreasing and bounded by
    ``cutoff``.  For the constant-L Pareto law ``c_N`` decreases to
    ``sqrt(p!) * (p!)**(-1/(2p))``, so this returns True for any sane cutoff.
    """
    seq = [_critical_ratio(p, 2**k) for k in range(max(1, math.ceil(math.log2(p))), k_max + 1)]
    nonincreasing = all(b <= a * (1 + 1e-12) for a, b in zip(seq, seq[1:]))
    return nonincreasing and max(seq[1:]) <= cutoff


def classify(tail: TailLaw, p: int, cutoff: float = 10.0) -> Regime:
    if not tail.is_heavy:
        return Regime.FINITE_MOMENT
    if math.isclose(tail.alpha, 2 * p, rel_tol=0, abs_tol=1e-12):
        return Regime.CRITICAL_LIGHT if critical_is_light(p, cutoff) else Regime.CRITICAL_HEAVY
    return Regime.SUBCRITICAL if tail.alpha < 2 * p else Regime.FINITE_MOMENT


def quantile_scale(tail: TailLaw, N: int, p: int, cutoff: float = 10.0) -> TailScales:
    """Quantile scale ``d``, ratio ``c = d / sqrt(N)`` and normalization ``b``."""
    M = num_multisets(N, p)
    regime = classify(tail, p, cutoff)
    if not tail.is_heavy:
        return TailScales(N, p, M, None, None, math.sqrt(N), regime)
    d = math.sqrt(math.factorial(p)) * M ** (1.0 / tail.alpha)
    c = d / math.sqrt(N)
    b = d if regime.extreme_scaled else math.sqrt(N)
    return TailScales(N, p, M, d, c, b, regime)


def pareto_transform(u, sign, alpha: float):
    """Map uniforms ``u`` in (0, 1] and signs to symmetric Pareto values."""
    return np.asarray(sign, dtype=float) * np.asarray(u, dtype=float) ** (-1.0 / alpha)


def sample_heavy(rng: np.random.Generator, alpha: float, size=None):
    """Draw ``S * U**(-1/alpha)`` with ``S`` a fair sign and ``U`` uniform on (0, 1]."""
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    u = 1.0 - rng.random(size)
    s = rng.integers(0, 2, size=size) * 2 - 1
    out = pareto_transform(u, s, alpha)
    return float(out) if size is None else out


def frechet_cdf(u, alpha: float):
    """``exp(-u**-alpha)`` for ``u > 0`` and 0 otherwise."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        pos = np.where(u > 0, u, 1.0)
        out = np.where(u > 0, np.exp(-(pos ** -alpha)), 0.0)
    return float(out) if out.ndim == 0 else out


def frechet_median(alpha: float) -> float:
    return math.log(2.0) ** (-1.0 / alpha)


def lambda_stat(tensor: "CouplingTensor", scales: TailScales) -> ExtremeStat:
    """Maximal rescaled coupling over tuples with pairwise distinct indices.

    Tuples with a repeated index are excluded outright.
    """
    if not tensor.tail.is_heavy:
        raise ConfigError("Lambda is only defined for heavy-tailed layers")
    if (tensor.N, tensor.p) != (scales.N, scales.p):
        raise ConfigError("tensor and scales disagree on (N, p)")
    distinct = tensor.kfact == 1
    if not distinct.any():
        return ExtremeStat(0.0, None, tensor.tail.alpha)
    coef = np.abs(tensor.coefficients())
    coef = np.where(distinct, coef, -1.0)
    i = int(np.argmax(coef))
    lam = float(coef[i]) / scales.d
    return ExtremeStat(lam, tuple(int(v) for v in tensor.indices[i]), tensor.tail.alpha)
