"""Finite-N free energy and ground-state estimates for one disorder realization."""

from __future__ import annotations

import enum
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc, betaln, logsumexp

from .disorder import CouplingTensor, Hamiltonian, MixtureSpec, colex_rank
from .errors import ConfigError
from .spike_bulk import SpikeSet
from .tails import TailScales

log = logging.getLogger(__name__)

JACKKNIFE_BLOCKS = 20
_CHUNK = 4096


class Estimator(str, enum.Enum):
    PLAIN = "plain"
    STRATIFIED = "stratified"


class GseMethod(str, enum.Enum):
    ASCENT = "ascent"
    EIGEN_P2 = "eigen_p2"


@dataclass(frozen=True)
class FreeEnergyEstimate:
    value: float
    stderr: float
    n_samples: int
    estimator: Estimator

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.n_samples,
                "estimator": self.estimator.value}


@dataclass(frozen=True)
class GseEstimate:
    value: float
    restarts: int
    method: GseMethod
    best_so_far: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {"value": self.value, "restarts": self.restarts, "method": self.method.value}


def sample_sphere(rng: np.random.Generator, N: int, size: int | None = None,
                  radius: float | None = None) -> np.ndarray:
    """Uniform points on the sphere of radius ``sqrt(N)`` (or ``radius``) in R^N."""
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    g = rng.standard_normal((N,) if size is None else (size, N))
    r = math.sqrt(N) if radius is None else radius
    return g * (r / np.linalg.norm(g, axis=-1, keepdims=True))


def _block_lse(logw: np.ndarray, blocks: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-block log-sum-exp and block sizes (``np.array_split`` layout)."""
    parts = np.array_split(logw, blocks)
    return (np.array([logsumexp(b) for b in parts]), np.array([len(b) for b in parts]))


def _jackknife(estimates: np.ndarray) -> float:
    B = len(estimates)
    return float(math.sqrt((B - 1) / B * np.sum((estimates - estimates.mean()) ** 2)))


def _hamiltonian_values(ham: Hamiltonian, X: np.ndarray) -> np.ndarray:
    return np.concatenate([ham.values(X[a:a + _CHUNK]) for a in range(0, len(X), _CHUNK)])


def free_energy_plain(tensors: Sequence[CouplingTensor], spec: MixtureSpec,
                      scales: Sequence[TailScales] | None, beta: float, n: int,
                      rng: np.random.Generator, blocks: int = JACKKNIFE_BLOCKS) -> FreeEnergyEstimate:
    """``(1/N) log mean exp(beta H)`` over ``n`` uniform sphere points.

    Biased low when a few spikes dominate the integrand, since uniform draws
    almost never visit the spike direction.
    """
    if n < 2:
        raise ConfigError(f"need at least 2 samples, got {n}")
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    if beta == 0:
        return FreeEnergyEstimate(0.0, 0.0, n, Estimator.PLAIN)
    ham = Hamiltonian(tensors, spec, scales)
    N = ham.N
    logw = np.empty(n)
    for a in range(0, n, _CHUNK):
        m = min(_CHUNK, n - a)
        logw[a:a + m] = beta * ham.values(sample_sphere(rng, N, m))
    value = (logsumexp(logw) - math.log(n)) / N
    B = min(blocks, n)
    lse, sizes = _block_lse(logw, B)
    loo = np.array([
        (logsumexp(np.delete(lse, j)) - math.log(n - sizes[j])) / N for j in range(B)
    ])
    return FreeEnergyEstimate(float(value), _jackknife(loo), n, Estimator.PLAIN)


def default_strata(n: int = 120, q_max: float = 1.0 - 1e-4) -> np.ndarray:
    """Uniform points on [0, 0.95] plus points geometrically dense toward ``q_max``."""
    n_near = max(n // 4, 2)
    head = np.linspace(0.0, 0.95, n - n_near, endpoint=False)
    tail = 1.0 - np.geomspace(0.05, 1.0 - q_max, n_near)
    return np.unique(np.concatenate([head, tail]))


def log_cell_masses(q_grid: np.ndarray, N: int, d: int) -> np.ndarray:
    """Log Beta(d/2, (N-d)/2) mass of the cell around each grid point.

    Cells are bounded by midpoints, the first starts at 0 and the last ends
    at 1, so the masses sum to one.  Underflowing cells fall back to
    density times width.
    """
    q = np.asarray(q_grid, dtype=float)
    a, b = d / 2.0, (N - d) / 2.0
    edges = np.concatenate([[0.0], 0.5 * (q[1:] + q[:-1]), [1.0]])
    cdf = betainc(a, b, edges)
    mass = np.diff(cdf)
    out = np.empty(len(q))
    for i, m in enumerate(mass):
        if m > 1e-280:
            out[i] = math.log(m)
        else:
            qi = min(max(q[i], 1e-300), 1.0 - 1e-16)
            out[i] = ((a - 1) * math.log(qi) + (b - 1) * math.log1p(-qi) - betaln(a, b)
                      + math.log(edges[i + 1] - edges[i]))
    return out


@dataclass(frozen=True)
class _SpikeCandidate:
    layer: int
    p: int
    coords: tuple[int, ...]
    weight: float


def _spike_candidates(ham: Hamiltonian, spike: SpikeSet) -> list[_SpikeCandidate]:
    out = []
    for e in spike.entries:
        tup = tuple(sorted(e.tuple))
        if len(set(tup)) < len(tup):
            continue
        layer = e.layer
        if layer >= len(ham.tensors) or ham.tensors[layer].p != len(tup):
            matches = [i for i, t in enumerate(ham.tensors) if t.p == len(tup)]
            if not matches:
                continue
            layer = matches[0]
        w = ham.monomial_weight(layer, colex_rank(tup))
        out.append(_SpikeCandidate(layer, len(tup), tup, w))
    return out


def _dominant(cands: list[_SpikeCandidate], N: int, q: float) -> _SpikeCandidate:
    """Candidate with the largest ``|w| N**(p/2-1) (q/p)**(p/2)`` (first on ties)."""
    best, best_v = cands[0], -1.0
    for c in cands:
        v = abs(c.weight) * N ** (c.p / 2 - 1) * (q / c.p) ** (c.p / 2)
        if v > best_v:
            best, best_v = c, v
    return best


def spike_point(ham: Hamiltonian, cand: _SpikeCandidate, q: float) -> np.ndarray:
    """Mass ``N q`` spread evenly over the tuple, signs chosen to maximize ``H``.

    Only sign patterns whose product agrees with the sign of the monomial
    weight are enumerated (2**(p-1) of them); ties keep the first pattern.
    """
    N = ham.N
    amp = math.sqrt(N * q / cand.p)
    target = 1.0 if cand.weight >= 0 else -1.0
    best, best_v = None, -math.inf
    for signs in itertools.product((1.0, -1.0), repeat=cand.p - 1):
        last = target * math.prod(signs)
        x = np.zeros(N)
        x[list(cand.coords)] = amp * np.array(signs + (last,))
        v = ham(x) if q > 0 else 0.0
        if v > best_v:
            best, best_v = x, v
    return best


def free_energy_stratified(tensors: Sequence[CouplingTensor], spec: MixtureSpec,
                           scales: Sequence[TailScales] | None, beta: float, spike: SpikeSet,
                           q_grid: Sequence[float] | None, n_per_slice: int,
                           rng: np.random.Generator,
                           blocks: int = JACKKNIFE_BLOCKS) -> FreeEnergyEstimate:
    """Spike-aware estimate by disintegrating the sphere along the dominant tuple.

    For each ``q`` the tuple coordinates are fixed at the equal-mass point
    of squared norm ``N q`` and the remaining ``N - p`` coordinates are drawn
    uniformly from the sphere of radius ``sqrt(N (1-q))``.  Strata are
    weighted by their exact Beta(p/2, (N-p)/2) mass and combined by
    log-sum-exp.  The jackknife drops one block of residual draws from every
    stratum at once.
    """
    if n_per_slice < 2:
        raise ConfigError(f"need at least 2 samples per slice, got {n_per_slice}")
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    ham = Hamiltonian(tensors, spec, scales)
    cands = _spike_candidates(ham, spike)
    if not cands:
        warnings.warn("no usable spike tuple; falling back to the plain estimator",
                      RuntimeWarning, stacklevel=2)
        return free_energy_plain(tensors, spec, scales, beta, n_per_slice * 20, rng, blocks)
    qs = np.asarray(default_strata() if q_grid is None else q_grid, dtype=float)
    if qs.ndim != 1 or len(qs) == 0 or qs.min() < 0 or qs.max() > 1 - 1e-4 or np.any(np.diff(qs) <= 0):
        raise ConfigError("q_grid must be strictly increasing inside [0, 1 - 1e-4]")
    N = ham.N
    B = min(blocks, n_per_slice)
    lse = np.empty((len(qs), B))
    sizes = None
    log_mass = {}
    for i, q in enumerate(qs):
        cand = _dominant(cands, N, float(q))
        if cand.p not in log_mass:
            log_mass[cand.p] = log_cell_masses(qs, N, cand.p)
        x = spike_point(ham, cand, float(q))
        rest = np.setdiff1d(np.arange(N), cand.coords)
        Y = sample_sphere(rng, len(rest), n_per_slice, radius=math.sqrt(N * (1.0 - q)))
        X = np.repeat(x[None, :], n_per_slice, axis=0)
        X[:, rest] = Y
        logw = beta * _hamiltonian_values(ham, X) if beta else np.zeros(n_per_slice)
        lse[i], sizes = _block_lse(logw, B)
        lse[i] += log_mass[cand.p][i]
    total = n_per_slice

    def estimate(drop: int | None) -> float:
        if drop is None:
            per_cell = logsumexp(lse, axis=1) - math.log(total)
        else:
            per_cell = logsumexp(np.delete(lse, drop, axis=1), axis=1) - math.log(total - sizes[drop])
        return float(logsumexp(per_cell) / N)

    value = estimate(None)
    loo = np.array([estimate(j) for j in range(B)])
    return FreeEnergyEstimate(value, _jackknife(loo), n_per_slice * len(qs), Estimator.STRATIFIED)


def _ascend(ham: Hamiltonian, sigma: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    """Riemannian gradient ascent with retraction and Armijo backtracking.

    The trial step is the Barzilai-Borwein ratio of the last two iterates
    (doubling the previous accepted step when it is unavailable); the line
    search then halves it until the Armijo condition holds, so ``H`` never
    decreases.
    """
    N = ham.N
    s = sigma * (math.sqrt(N) / np.linalg.norm(sigma))
    h = ham(s)
    g = ham.gradient(s)
    gt = g - (g @ s / N) * s
    step = 1.0 / max(1.0, float(np.linalg.norm(g)) / math.sqrt(N))
    for _ in range(max_iter):
        gn2 = float(gt @ gt)
        if math.sqrt(gn2 / N) < tol:
            break
        while True:
            cand = s + step * gt
            cand *= math.sqrt(N) / np.linalg.norm(cand)
            hc = ham(cand)
            if hc >= h + 1e-4 * step * gn2:
                break
            step *= 0.5
            if step < 1e-30:
                return s, h
        g_new = ham.gradient(cand)
        gt_new = g_new - (g_new @ cand / N) * cand
        ds, dg = cand - s, gt_new - gt
        curv = -float(ds @ dg)
        step = float(ds @ ds) / curv if curv > 0 else 2.0 * step
        step = min(max(step, 1e-12), 1e12)
        s, h, gt = cand, hc, gt_new
    return s, h


def spike_inits(ham: Hamiltonian, spike: SpikeSet, qstars: Sequence[float],
                rng: np.random.Generator) -> list[np.ndarray]:
    """Starts with mass ``N q`` on the dominant spike tuple and a random residual."""
    cands = _spike_candidates(ham, spike)
    out = []
    N = ham.N
    for q in qstars:
        if not cands or not 0.0 < q < 1.0:
            continue
        cand = _dominant(cands, N, q)
        x = spike_point(ham, cand, q)
        rest = np.setdiff1d(np.arange(N), cand.coords)
        if len(rest):
            x[rest] = sample_sphere(rng, len(rest), radius=math.sqrt(N * (1.0 - q)))
        out.append(x)
    return out


def gse_ascent(tensors: Sequence[CouplingTensor], spec: MixtureSpec,
               scales: Sequence[TailScales] | None, restarts: int, rng: np.random.Generator,
               spike: SpikeSet | None = None, qstars: Sequence[float] = (0.5, 0.9, 0.999),
               tol: float = 1e-8, max_iter: int = 20_000) -> GseEstimate:
    """Best ``H / N`` found by projected ascent from uniform and spike-informed starts.

    Every returned value is ``H`` at a point of the sphere divided by ``N``,
    hence a lower bound on the ground-state energy.
    """
    if restarts < 1:
        raise ConfigError(f"restarts must be >= 1, got {restarts}")
    ham = Hamiltonian(tensors, spec, scales)
    N = ham.N
    starts = list(sample_sphere(rng, N, restarts))
    if spike is not None and len(spike):
        starts += spike_inits(ham, spike, qstars, rng)
    best, trace = -math.inf, []
    for s0 in starts:
        _, h = _ascend(ham, s0, tol, max_iter)
        best = max(best, h / N)
        trace.append(best)
    return GseEstimate(float(best), len(starts), GseMethod.ASCENT, tuple(trace))


def gse_eigen_p2(tensor: CouplingTensor | Sequence[CouplingTensor], spec: MixtureSpec,
                 scales: Sequence[TailScales] | None = None) -> GseEstimate:
    """``lambda_max(A)`` for ``H(sigma) = sigma^T A sigma`` (symmetric LAPACK solver)."""
    tensors = [tensor] if isinstance(tensor, CouplingTensor) else list(tensor)
    if any(layer.p != 2 for layer in spec.layers):
        raise ConfigError("the eigenvalue oracle needs a pure p = 2 mixture")
    A = Hamiltonian(tensors, spec, scales).matrix()
    lam = float(np.linalg.eigvalsh(A)[-1])
    return GseEstimate(lam, 0, GseMethod.EIGEN_P2)
