"""Threshold split of heavy-tailed layers into spike (extreme) and bulk couplings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .disorder import CouplingTensor, MixtureSpec
from .errors import ConfigError
from .tails import ExtremeStat, Regime, TailScales

DEFAULT_EPSILON0 = 0.1


@dataclass(frozen=True)
class SpikeEntry:
    p: int
    layer: int
    rank: int
    tuple: tuple[int, ...]
    value: float
    base: float = math.nan


@dataclass(frozen=True)
class SpikeSet:
    """Couplings above the spike threshold, possibly collected from several layers.

    ``value`` is the tensor entry ``H^{(p)}_I``; tuples use the original
    0-based indices.
    """

    entries: tuple[SpikeEntry, ...] = ()
    thresholds: dict[int, float] = field(default_factory=dict)
    epsilon0: float = DEFAULT_EPSILON0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def support(self) -> frozenset[int]:
        return frozenset(i for e in self.entries for i in e.tuple)

    @property
    def has_repeats(self) -> bool:
        return any(len(set(e.tuple)) < len(e.tuple) for e in self.entries)

    @property
    def has_intersections(self) -> bool:
        seen: set[int] = set()
        for e in self.entries:
            s = set(e.tuple)
            if seen & s:
                return True
            seen |= s
        return False

    def union(self, other: "SpikeSet") -> "SpikeSet":
        if other.epsilon0 != self.epsilon0 and self.entries and other.entries:
            raise ConfigError("cannot merge spike sets built with different epsilon0")
        return SpikeSet(self.entries + other.entries, {**self.thresholds, **other.thresholds},
                        self.epsilon0 if self.entries else other.epsilon0)

    @classmethod
    def from_tuples(cls, tuples: Sequence[Sequence[int]], value: float = 1.0,
                    epsilon0: float = DEFAULT_EPSILON0) -> "SpikeSet":
        entries = tuple(SpikeEntry(len(t), 0, -1, tuple(int(i) for i in t), value) for t in tuples)
        return cls(entries, {}, epsilon0)


def spike_threshold(scales: TailScales, alpha: float, epsilon0: float) -> float:
    """``u = b * N**(-epsilon0 / alpha)``."""
    return scales.b * scales.N ** (-epsilon0 / alpha)


def split(tensor: CouplingTensor, scales: TailScales, epsilon0: float = DEFAULT_EPSILON0,
          layer: int = 0) -> tuple[SpikeSet, CouplingTensor]:
    """Partition a layer by ``|H^{(p)}_I| > u``; the bulk tensor has spikes zeroed.

    Finite-moment layers (including heavy layers with alpha > 2p) have no
    spike part and are returned unchanged.
    """
    if not epsilon0 > 0:
        raise ConfigError(f"epsilon0 must be positive, got {epsilon0}")
    if (tensor.N, tensor.p) != (scales.N, scales.p):
        raise ConfigError("tensor and scales disagree on (N, p)")
    if scales.regime is Regime.FINITE_MOMENT:
        return SpikeSet((), {}, epsilon0), tensor
    u = spike_threshold(scales, tensor.tail.alpha, epsilon0)
    ent = tensor.entries()
    mask = np.abs(ent) > u
    ranks = np.flatnonzero(mask)
    entries = tuple(
        SpikeEntry(tensor.p, layer, int(r), tuple(int(i) for i in tensor.indices[r]),
                   float(ent[r]), float(tensor.base[r]))
        for r in ranks
    )
    bulk = np.where(mask, 0.0, tensor.base)
    return SpikeSet(entries, {tensor.p: u}, epsilon0), tensor.with_base(bulk)


def split_all(tensors: Sequence[CouplingTensor], scales: Sequence[TailScales],
              epsilon0: float = DEFAULT_EPSILON0) -> tuple[SpikeSet, list[CouplingTensor]]:
    spikes = SpikeSet((), {}, epsilon0)
    bulks = []
    for i, (t, s) in enumerate(zip(tensors, scales)):
        sp, bk = split(t, s, epsilon0, layer=i)
        spikes = spikes.union(sp)
        bulks.append(bk)
    return spikes, bulks


def reconstruct(spikes: SpikeSet, bulk: CouplingTensor, layer: int = 0) -> CouplingTensor:
    """Undo :func:`split` for one layer; stored base draws come back bit for bit."""
    base = np.array(bulk.base)
    for e in spikes.entries:
        if e.layer == layer and e.p == bulk.p:
            base[e.rank] = e.base
    return bulk.with_base(base)


def spike_diagnostics(spikes: SpikeSet, N: int) -> dict:
    """Observed structure of the spike set; never raises on violations."""
    bound = N ** (2 * spikes.epsilon0)
    support = len(spikes.support)
    return {
        "count": len(spikes),
        "support_size": support,
        "support_bound": bound,
        "support_within_bound": support <= bound,
        "has_repeats": spikes.has_repeats,
        "has_intersections": spikes.has_intersections,
        "thresholds": {str(p): u for p, u in spikes.thresholds.items()},
    }


def amgm_max(spikes: Sequence[tuple[float, int]], q: float) -> tuple[float, int | None]:
    """``max_i |a_i| (q / j_i)**(j_i / 2)`` with lowest-index tie-break."""
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"q must lie in [0, 1], got {q}")
    best, arg = 0.0, None
    for i, (a, j) in enumerate(spikes):
        if j < 2:
            raise ConfigError(f"spike arity must be >= 2, got {j}")
        v = abs(a) * (q / j) ** (j / 2)
        if arg is None or v > best:
            best, arg = v, i
    return best, arg


def nim_amplitudes(spec: MixtureSpec, lambdas: Sequence[ExtremeStat | None],
                   scales: Sequence[TailScales]) -> list[tuple[float, int]]:
    """Per heavy layer ``(beta |gamma_p| w_p Lambda_p, p)``; ``w_p`` is ``c`` or 1."""
    out = []
    for layer, lam, sc in zip(spec.layers, lambdas, scales):
        if lam is None or sc.regime is Regime.FINITE_MOMENT:
            continue
        out.append((spec.beta * abs(layer.gamma) * sc.weight() * lam.lam, layer.p))
    return out


def e_nim(spec: MixtureSpec, lambdas: Sequence[ExtremeStat | None],
          scales: Sequence[TailScales], q: float) -> float:
    """Largest single-spike energy at slice mass ``q`` (0 without heavy layers)."""
    if not 0.0 <= q < 1.0:
        raise ConfigError(f"q must lie in [0, 1), got {q}")
    return amgm_max(nim_amplitudes(spec, lambdas, scales), q)[0]


@dataclass
class BulkDiagnostics:
    p: int
    N: int
    max_abs: float
    moment_2p: float
    second_moment: float
    bound_max: float
    ref_2p: float
    ref_second: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bulk_moment_report(bulks: Sequence[CouplingTensor], scales: Sequence[TailScales],
                       epsilon0: float = DEFAULT_EPSILON0) -> list[BulkDiagnostics]:
    """Empirical moments of ``J = (N**0.5 / b) H^{(p),B}`` next to the reference scales.

    References: ``N**(1/2 - epsilon0/alpha)`` for the maximum, ``N**(1/2)`` for
    the 2p-th moment and ``c**-2`` for the second moment.  Constants and
    exponents are left to :func:`fit_power_law` across several ``N``.
    """
    out = []
    for t, s in zip(bulks, scales):
        J = math.sqrt(s.N) / s.b * t.entries()
        alpha = t.tail.alpha if t.tail.is_heavy else math.inf
        out.append(BulkDiagnostics(
            p=t.p, N=t.N,
            max_abs=float(np.max(np.abs(J))) if J.size else 0.0,
            moment_2p=float(np.mean(np.abs(J) ** (2 * t.p))),
            second_moment=float(np.mean(J * J)),
            bound_max=s.N ** (0.5 - epsilon0 / alpha),
            ref_2p=math.sqrt(s.N),
            ref_second=None if s.c is None else s.c ** -2,
        ))
    return out


def fit_power_law(Ns: Sequence[float], values: Sequence[float]) -> tuple[float, float]:
    """Least-squares ``values ~ C * N**exponent`` on log-log axes; returns ``(C, exponent)``."""
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(math.exp(intercept)), float(slope)
