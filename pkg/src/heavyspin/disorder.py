"""Coupling tensors on ordered multi-indices and the normalized mixed Hamiltonian.

A layer of order ``p`` stores one base draw per multiset ``i_1 <= ... <= i_p``
(0-based, colex order).  For a multiset with repeat profile ``k`` the tensor
entry is ``(k!/p!)**0.5 * base`` and, summing over the ``p!/k!`` orderings,
the monomial coefficient is ``(p!/k!)**0.5 * base``.  The symmetric N**p array
is never stored.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BudgetExceeded, ConfigError
from .tails import TailLaw, TailScales, num_multisets, quantile_scale

DEFAULT_BUDGET = 20_000_000
DENSE_P2_MAX_N = 4096


@functools.lru_cache(maxsize=32)
def _multiset_indices(N: int, p: int) -> np.ndarray:
    idx = np.arange(N, dtype=np.int64)[:, None]
    for r in range(2, p + 1):
        # colex: the (r-1)-multisets over [0, m] are a prefix of those over [0, N)
        counts = np.array([math.comb(m + r - 1, r - 1) for m in range(N)], dtype=np.int64)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        rows = np.arange(counts.sum(), dtype=np.int64) - starts
        last = np.repeat(np.arange(N, dtype=np.int64), counts)
        idx = np.column_stack([idx[rows], last])
    idx.setflags(write=False)
    return idx


def multiset_indices(N: int, p: int) -> np.ndarray:
    """All multisets of size ``p`` over ``range(N)`` as sorted rows, colex order."""
    num_multisets(N, p)
    return _multiset_indices(N, p)


def colex_rank(tup: Sequence[int]) -> int:
    """Position of a multiset (any order) in :func:`multiset_indices`."""
    s = sorted(int(i) for i in tup)
    return sum(math.comb(i + j, j + 1) for j, i in enumerate(s))


@functools.lru_cache(maxsize=32)
def _repeat_factorials(N: int, p: int) -> np.ndarray:
    idx = _multiset_indices(N, p)
    kfact = np.ones(len(idx), dtype=np.int64)
    run = np.ones(len(idx), dtype=np.int64)
    for j in range(1, p):
        run = np.where(idx[:, j] == idx[:, j - 1], run + 1, 1)
        kfact *= run
    kfact.setflags(write=False)
    return kfact


@dataclass(frozen=True, eq=False)
class CouplingTensor:
    """One layer's disorder: ``base[r]`` is the draw for the multiset of colex rank r."""

    N: int
    p: int
    base: np.ndarray
    tail: TailLaw
    seed: int | None = None

    def __post_init__(self):
        base = np.array(self.base, dtype=np.float64)
        if base.shape != (num_multisets(self.N, self.p),):
            raise ConfigError(
                f"base has shape {base.shape}, expected ({num_multisets(self.N, self.p)},)"
            )
        base.setflags(write=False)
        object.__setattr__(self, "base", base)

    @property
    def M(self) -> int:
        return len(self.base)

    @property
    def indices(self) -> np.ndarray:
        return _multiset_indices(self.N, self.p)

    @property
    def kfact(self) -> np.ndarray:
        """``k!`` (product of factorials of repeat counts) per stored multiset."""
        return _repeat_factorials(self.N, self.p)

    def entries(self) -> np.ndarray:
        """Tensor entries ``H^{(p)}_I = (k!/p!)**0.5 * base``."""
        return np.sqrt(self.kfact / math.factorial(self.p)) * self.base

    def coefficients(self) -> np.ndarray:
        """Monomial coefficients ``(p!/k!)**0.5 * base`` of ``prod_j sigma_{i_j}``."""
        return np.sqrt(math.factorial(self.p) / self.kfact) * self.base

    def with_base(self, base: np.ndarray) -> "CouplingTensor":
        return CouplingTensor(self.N, self.p, base, self.tail, self.seed)

    def dense(self) -> np.ndarray:
        """Full symmetric array (small N only; used by tests and the p=2 matrix)."""
        out = np.zeros((self.N,) * self.p)
        ent = self.entries()
        for perm in itertools.permutations(range(self.p)):
            out[tuple(self.indices[:, perm].T)] = ent
        return out


@dataclass(frozen=True)
class Layer:
    p: int
    gamma: float
    tail: TailLaw

    def to_dict(self) -> dict:
        return {"p": self.p, "gamma": self.gamma, "tail": self.tail.to_dict()}


@dataclass(frozen=True)
class MixtureSpec:
    """Mixed model: layers ``(p, gamma_p, tail law)`` and inverse temperature."""

    layers: tuple[Layer, ...]
    beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        ps = [l.p for l in self.layers]
        if not ps:
            raise ConfigError("a mixture needs at least one layer")
        if len(set(ps)) != len(ps):
            raise ConfigError(f"layer orders must be distinct, got {ps}")
        if any(p < 2 for p in ps):
            raise ConfigError("layer orders must be >= 2")
        if all(l.gamma == 0 for l in self.layers):
            raise ConfigError("at least one gamma_p must be nonzero")
        if not self.beta >= 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")

    @classmethod
    def pure(cls, p: int, tail: TailLaw, gamma: float = 1.0, beta: float = 1.0) -> "MixtureSpec":
        return cls((Layer(p, gamma, tail),), beta)

    @property
    def max_p(self) -> int:
        return max(l.p for l in self.layers)

    def scales(self, N: int, cutoff: float = 10.0) -> list[TailScales]:
        return [quantile_scale(l.tail, N, l.p, cutoff) for l in self.layers]

    def with_beta(self, beta: float) -> "MixtureSpec":
        return MixtureSpec(self.layers, beta)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        layers = [Layer(int(l["p"]), float(l["gamma"]), TailLaw.from_dict(l["tail"])) for l in d["layers"]]
        return cls(tuple(layers), float(d.get("beta", 1.0)))


def generate(rng: np.random.Generator, spec: MixtureSpec, N: int,
             budget: int = DEFAULT_BUDGET, seed: int | None = None) -> list[CouplingTensor]:
    """Independent base draws for every layer of ``spec`` at size ``N``."""
    if N < spec.max_p:
        raise ConfigError(f"N={N} is smaller than the largest order {spec.max_p}")
    sizes = [num_multisets(N, l.p) for l in spec.layers]
    if sum(sizes) > budget:
        raise BudgetExceeded(sum(sizes), budget)
    return [CouplingTensor(N, l.p, l.tail.sample(rng, m), l.tail, seed)
            for l, m in zip(spec.layers, sizes)]


def to_sphere(v: np.ndarray) -> np.ndarray:
    """Radially project onto the sphere of radius ``sqrt(N)`` (last axis)."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    return v * (math.sqrt(n) / np.linalg.norm(v, axis=-1, keepdims=True))


def layer_factor(gamma: float, scales: TailScales) -> float:
    """``gamma * (N**0.5 / b) * N**(-(p-1)/2)``."""
    N, p = scales.N, scales.p
    return gamma * math.sqrt(N) / scales.b * N ** (-(p - 1) / 2)


class _LayerOp:
    """Evaluation of ``sum_I w_I prod_j sigma_{i_j}`` over stored multisets."""

    def __init__(self, tensor: CouplingTensor, factor: float):
        self.p = tensor.p
        self.N = tensor.N
        self.idx = tensor.indices
        self.w = factor * tensor.coefficients()
        self._matrix = None

    def matrix(self) -> np.ndarray:
        """Symmetric ``A`` with ``sigma^T A sigma`` equal to the layer (p=2 only)."""
        if self.p != 2:
            raise ConfigError("matrix form exists only for p = 2")
        if self._matrix is None:
            A = np.zeros((self.N, self.N))
            i, j = self.idx[:, 0], self.idx[:, 1]
            off = i != j
            A[i[off], j[off]] = 0.5 * self.w[off]
            A[j[off], i[off]] = 0.5 * self.w[off]
            A[i[~off], i[~off]] = self.w[~off]
            self._matrix = A
        return self._matrix

    def _use_matrix(self) -> bool:
        return self.p == 2 and self.N <= DENSE_P2_MAX_N

    def value(self, s: np.ndarray) -> float:
        if self._use_matrix():
            return float(s @ self.matrix() @ s)
        prod = s[self.idx[:, 0]].copy()
        for j in range(1, self.p):
            prod *= s[self.idx[:, j]]
        return float(prod @ self.w)

    def values(self, X: np.ndarray) -> np.ndarray:
        if self._use_matrix():
            return np.einsum("bi,bi->b", X @ self.matrix(), X)
        out = np.empty(len(X))
        chunk = max(1, 8_000_000 // max(1, len(self.w)))
        for a in range(0, len(X), chunk):
            Xc = X[a:a + chunk]
            prod = Xc[:, self.idx[:, 0]]
            for j in range(1, self.p):
                prod = prod * Xc[:, self.idx[:, j]]
            out[a:a + chunk] = prod @ self.w
        return out

    def gradient(self, s: np.ndarray) -> np.ndarray:
        if self._use_matrix():
            return 2.0 * (self.matrix() @ s)
        cols = [s[self.idx[:, j]] for j in range(self.p)]
        prefix = [np.ones_like(self.w)]
        for c in cols[:-1]:
            prefix.append(prefix[-1] * c)
        g = np.zeros(self.N)
        suffix = np.ones_like(self.w)
        for j in range(self.p - 1, -1, -1):
            g += np.bincount(self.idx[:, j], weights=self.w * prefix[j] * suffix, minlength=self.N)
            suffix = suffix * cols[j]
        return g


class Hamiltonian:
    """Normalized mixed Hamiltonian of a disorder realization."""

    def __init__(self, tensors: Sequence[CouplingTensor], spec: MixtureSpec,
                 scales: Sequence[TailScales] | None = None):
        if len(tensors) != len(spec.layers):
            raise ConfigError("one tensor per layer is required")
        Ns = {t.N for t in tensors}
        if len(Ns) != 1:
            raise ConfigError(f"tensors disagree on N: {sorted(Ns)}")
        self.N = Ns.pop()
        self.spec = spec
        self.tensors = list(tensors)
        self.scales = list(scales) if scales is not None else spec.scales(self.N)
        for t, l, s in zip(self.tensors, spec.layers, self.scales):
            if t.p != l.p or (s.N, s.p) != (t.N, t.p):
                raise ConfigError("tensor, layer and scales must agree on (N, p)")
        self.factors = [layer_factor(l.gamma, s) for l, s in zip(spec.layers, self.scales)]
        self._ops = [_LayerOp(t, f) for t, f in zip(self.tensors, self.factors)]

    def _check(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.N:
            raise ConfigError(f"state has length {s.shape[-1]}, expected {self.N}")
        return s

    def __call__(self, sigma: np.ndarray) -> float:
        s = self._check(sigma)
        return float(sum(op.value(s) for op in self._ops))

    value = __call__

    def values(self, X: np.ndarray) -> np.ndarray:
        """Batch evaluation over rows of ``X``."""
        X = np.atleast_2d(self._check(X))
        return sum(op.values(X) for op in self._ops)

    def gradient(self, sigma: np.ndarray) -> np.ndarray:
        s = self._check(sigma)
        return sum(op.gradient(s) for op in self._ops)

    def matrix(self) -> np.ndarray:
        """Effective ``A`` with ``H(sigma) = sigma^T A sigma`` for pure p=2 models."""
        if any(op.p != 2 for op in self._ops):
            raise ConfigError("matrix form requires a pure p = 2 mixture")
        return sum(op.matrix() for op in self._ops)

    def monomial_weight(self, layer: int, rank: int) -> float:
        """Normalized coefficient of the stored multiset ``rank`` in ``layer``."""
        return float(self._ops[layer].w[rank])


def hamiltonian(tensors, spec, scales, sigma) -> float:
    return Hamiltonian(tensors, spec, scales)(sigma)


def gradient(tensors, spec, scales, sigma) -> np.ndarray:
    return Hamiltonian(tensors, spec, scales).gradient(sigma)


_MAGIC = b"HSPTNSR1"


def save_tensor(tensor: CouplingTensor, path) -> None:
    """Write ``magic | u64 header length | JSON header | little-endian f64 payload``."""
    header = {
        "N": tensor.N, "p": tensor.p, "seed": tensor.seed, "tail": tensor.tail.to_dict(),
        "order": "colex", "count": tensor.M, "dtype": "<f8",
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        fh.write(tensor.base.astype("<f8").tobytes())


def load_tensor(path) -> CouplingTensor:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ConfigError(f"{path}: not a coupling tensor file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    if header.get("order") != "colex" or header.get("dtype") != "<f8":
        raise ConfigError(f"{path}: unsupported layout {header}")
    base = np.frombuffer(data[16 + hlen:], dtype="<f8")
    if len(base) != header["count"]:
        raise ConfigError(f"{path}: payload has {len(base)} values, header says {header['count']}")
    return CouplingTensor(header["N"], header["p"], base.astype(np.float64),
                          TailLaw.from_dict(header["tail"]), header["seed"])
