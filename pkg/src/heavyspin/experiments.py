"""Seeded experiment configs, replica sweeps and result persistence."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import tomli_w
from scipy.stats import kstest

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, nim
from .disorder import Layer, MixtureSpec, generate
from .errors import ConfigError
from .montecarlo import (free_energy_plain, free_energy_stratified, gse_ascent, gse_eigen_p2)
from .parisi import parisi_value
from .spike_bulk import DEFAULT_EPSILON0, nim_amplitudes, split_all
from .tails import Regime, TailLaw, frechet_cdf, lambda_stat
from .tap import bulk_xi, tap_optimize

log = logging.getLogger(__name__)

ESTIMATORS = ("plain", "stratified")


@dataclass(frozen=True)
class EstimatorSettings:
    kind: str = "plain"
    samples: int = 20_000
    n_per_slice: int = 200
    gse_restarts: int = 4
    epsilon0: float = DEFAULT_EPSILON0
    tap_grid: int = 200

    def __post_init__(self):
        if self.kind not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.kind!r}")
        for name, least in (("samples", 2), ("n_per_slice", 2), ("gse_restarts", 1),
                            ("tap_grid", 2)):
            if getattr(self, name) < least:
                raise ConfigError(f"estimator.{name} must be >= {least}, got {getattr(self, name)}")
        if not self.epsilon0 > 0:
            raise ConfigError(f"estimator.epsilon0 must be positive, got {self.epsilon0}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run; ``seed`` fixes all randomness.

    ``alphas`` drives the dichotomy sweep: each value replaces the tail of
    every layer of ``model`` by a Pareto law of that index.
    """

    model: MixtureSpec
    sizes: tuple[int, ...] = (50, 100)
    replicas: int = 4
    alphas: tuple[float, ...] = ()
    estimator: EstimatorSettings = EstimatorSettings()
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if not self.sizes or any(n < self.model.max_p for n in self.sizes):
            raise ConfigError(f"sizes must be nonempty and >= {self.model.max_p}: {self.sizes}")
        if self.replicas < 1:
            raise ConfigError(f"replicas must be >= 1, got {self.replicas}")
        if any(not a > 0 for a in self.alphas):
            raise ConfigError(f"alphas must be positive, got {self.alphas}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "sizes": list(self.sizes),
            "replicas": self.replicas,
            "alphas": list(self.alphas),
            "estimator": dataclasses.asdict(self.estimator),
            "seed": self.seed,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"model", "sizes", "replicas", "alphas", "estimator", "seed", "out"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "model" not in d:
            raise ConfigError("config needs a [model] table")
        try:
            est = EstimatorSettings(**d.get("estimator", {}))
            return cls(
                model=MixtureSpec.from_dict(d["model"]),
                sizes=tuple(d.get("sizes", (50, 100))),
                replicas=int(d.get("replicas", 4)),
                alphas=tuple(d.get("alphas", ())),
                estimator=est,
                seed=int(d.get("seed", 0)),
                out=str(d.get("out", "runs")),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Replace top-level fields (``None`` values are ignored)."""
        d = self.to_dict()
        est = dict(d["estimator"])
        for k, v in kw.items():
            if v is None:
                continue
            if k in est:
                est[k] = v
            elif k == "beta":
                d["model"]["beta"] = v
            elif k in d:
                d[k] = list(v) if isinstance(v, tuple) else v
            else:
                raise ConfigError(f"unknown override {k!r}")
        d["estimator"] = est
        return ExperimentConfig.from_dict(d)

    def model_for(self, alpha: float) -> MixtureSpec:
        layers = [Layer(l.p, l.gamma, TailLaw.heavy(alpha)) for l in self.model.layers]
        return MixtureSpec(tuple(layers), self.model.beta)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a TOML or JSON config file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(raw) if path.suffix == ".json" else tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(d)


def dump_config(cfg: ExperimentConfig, directory: str | os.PathLike) -> list[Path]:
    """Write ``config.toml`` and its JSON mirror ``config.json``."""
    directory = Path(directory)
    d = cfg.to_dict()
    toml_path, json_path = directory / "config.toml", directory / "config.json"
    toml_path.write_text(tomli_w.dumps(d))
    json_path.write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")
    return [toml_path, json_path]


@dataclass
class RunManifest:
    config_hash: str
    version: str
    started: str
    finished: str = ""
    seeds: list[dict] = field(default_factory=list)
    files: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, directory: Path) -> Path:
        path = directory / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def replica_seed(seed: int, key: Sequence[int]) -> np.random.SeedSequence:
    """Independent stream for one replica: ``SeedSequence(seed, spawn_key=key)``."""
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    """Order-preserving map on a bounded worker pool."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def write_jsonl(path: Path, records: Iterable[dict]) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def regime_flag(regime: Regime, p: int) -> str:
    if regime is Regime.SUBCRITICAL:
        return f"subcritical; compare to g_{p}(Λ)"
    if regime is Regime.FINITE_MOMENT:
        return "finite 2p-th moment; compare to Parisi"
    return "critical; compare to TAP formula"


DICHOTOMY_COLUMNS = [
    "alpha", "N", "replica", "regime", "lambda", "c", "F_hat", "stderr", "estimator",
    "gse", "gse_method", "pred_nim_f", "pred_nim_g", "pred_parisi", "pred_tap", "tap_qstar",
]
FRECHET_COLUMNS = ["N", "n", "ks", "pvalue", "median_lambda", "frechet_median"]


def emit_plotdata(results: Sequence[dict], path: str | os.PathLike,
                  columns: Sequence[str] = DICHOTOMY_COLUMNS) -> Path:
    """Long-format CSV, one row per record; an empty input gives a header-only file."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                           lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow({k: r.get(k, "") for k in columns})
    return path


def svg_line_plot(series: dict[str, Sequence[tuple[float, float]]], path: str | os.PathLike,
                  title: str = "", xlabel: str = "", ylabel: str = "",
                  width: int = 640, height: int = 400) -> Path:
    """Minimal dependency-free SVG with one polyline per series."""
    path = Path(path)
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(x) and math.isfinite(y)]
    pad = 50
    if pts:
        xs, ys = zip(*pts)
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle">{_esc(title)}</text>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>',
           f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" '
           f'text-anchor="middle">{_esc(ylabel)}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{x0:.3g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{x1:.3g}</text>',
           f'<text x="{pad - 5}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{pad - 5}" y="{pad + 5}" font-size="10" text-anchor="end">{y1:.3g}</text>']
    for i, (name, s) in enumerate(series.items()):
        colour = palette[i % len(palette)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s
                          if math.isfinite(x) and math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" font-size="11" fill="{colour}" '
                   f'text-anchor="end">{_esc(name)}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _median(vals: Sequence[float]) -> float | None:
    v = [x for x in vals if x is not None and math.isfinite(x)]
    return float(np.median(v)) if v else None


def dichotomy_replica(cfg: ExperimentConfig, alpha: float, N: int, key: tuple[int, int, int],
                      parisi: float) -> dict:
    """One disorder draw of the sweep with observed and predicted quantities."""
    rng = np.random.default_rng(replica_seed(cfg.seed, key))
    spec = cfg.model_for(alpha)
    beta = spec.beta
    est = cfg.estimator
    scales = spec.scales(N)
    tensors = generate(rng, spec, N)
    lams = [lambda_stat(t, s) for t, s in zip(tensors, scales)]
    top = max(range(len(lams)), key=lambda i: (abs(spec.layers[i].gamma) * lams[i].lam, -i))
    layer, sc, lam = spec.layers[top], scales[top], lams[top]
    w = 1.0 if sc.regime.extreme_scaled else sc.c
    h = abs(layer.gamma) * w * lam.lam

    spikes, _ = split_all(tensors, scales, est.epsilon0)
    if est.kind == "stratified" and len(spikes):
        fe = free_energy_stratified(tensors, spec, scales, beta, spikes, None,
                                    est.n_per_slice, rng)
    else:
        fe = free_energy_plain(tensors, spec, scales, beta, est.samples, rng)
    if all(l.p == 2 for l in spec.layers):
        gse = gse_eigen_p2(tensors, spec, scales)
    else:
        gse = gse_ascent(tensors, spec, scales, est.gse_restarts, rng, spike=spikes)

    xi = bulk_xi(spec, scales)
    if nim_amplitudes(spec, lams, scales):
        tap = tap_optimize(xi, spec, lams, scales, beta, grid=est.tap_grid)
        pred_tap, qstar = tap.value, tap.qstar
    else:
        pred_tap, qstar = parisi, 0.0
    return {
        "alpha": alpha, "N": N, "replica": key[2], "spawn_key": list(key),
        "regime": sc.regime.value, "flag": regime_flag(sc.regime, layer.p),
        "lambda": lam.lam, "argmax": list(lam.argmax_tuple) if lam.argmax_tuple else None,
        "c": sc.c, "spikes": len(spikes),
        "F_hat": fe.value, "stderr": fe.stderr, "estimator": fe.estimator.value,
        "gse": gse.value, "gse_method": gse.method.value,
        "pred_nim_f": nim.f(layer.p, beta * h), "pred_nim_g": nim.g(layer.p, h),
        "pred_parisi": parisi, "pred_tap": pred_tap, "tap_qstar": qstar,
    }


def _dichotomy_summary(cfg: ExperimentConfig, records: list[dict]) -> dict:
    cells = []
    p = cfg.model.max_p
    for alpha in cfg.alphas:
        for N in cfg.sizes:
            rs = [r for r in records if r["alpha"] == alpha and r["N"] == N]
            if not rs:
                continue
            regime = Regime(rs[0]["regime"])
            cells.append({
                "alpha": alpha, "N": N, "replicas": len(rs), "regime": regime.value,
                "flag": regime_flag(regime, p),
                "median_lambda": _median([r["lambda"] for r in rs]),
                "median_F_hat": _median([r["F_hat"] for r in rs]),
                "median_gse": _median([r["gse"] for r in rs]),
                "median_abs_gse_minus_nim_g": _median([abs(r["gse"] - r["pred_nim_g"]) for r in rs]),
                "median_abs_F_minus_parisi": _median([abs(r["F_hat"] - r["pred_parisi"]) for r in rs]),
                "median_abs_F_minus_tap": _median([abs(r["F_hat"] - r["pred_tap"]) for r in rs]),
                "median_abs_F_minus_nim_f": _median([abs(r["F_hat"] - r["pred_nim_f"]) for r in rs]),
                "pred_parisi": rs[0]["pred_parisi"],
            })
    return {"p": p, "beta": cfg.model.beta, "cells": cells}


def default_alphas(p: int) -> tuple[float, ...]:
    """One index below, at and above ``2p``."""
    return (p - 0.5, 2.0 * p, 3.0 * p)


def _prepare(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def run_dichotomy(cfg: ExperimentConfig, threads: int = 1, deterministic: bool = True) -> RunManifest:
    """Sweep alpha below, at and above 2p and compare each regime to its prediction.

    Writes ``records.jsonl`` (one line per alpha, N, replica), ``cells.csv``,
    ``summary.json``, ``plot_gse.svg``, the config pair and ``manifest.json``.
    """
    if not cfg.alphas:
        cfg = cfg.with_overrides(alphas=default_alphas(cfg.model.max_p))
    out = _prepare(cfg)
    manifest = RunManifest(cfg.hash(), __version__, _now())
    beta = cfg.model.beta
    tasks = []
    for ia, alpha in enumerate(cfg.alphas):
        spec = cfg.model_for(alpha)
        for iN, N in enumerate(cfg.sizes):
            parisi = parisi_value(bulk_xi(spec, spec.scales(N)), beta)
            for r in range(cfg.replicas):
                tasks.append((alpha, N, (ia, iN, r), parisi))
                manifest.seeds.append({"alpha": alpha, "N": N, "replica": r,
                                       "entropy": cfg.seed, "spawn_key": [ia, iN, r]})
    workers = 1 if deterministic else threads
    records = _map(lambda t: dichotomy_replica(cfg, *t), tasks, workers)

    files = dump_config(cfg, out)
    files.append(write_jsonl(out / "records.jsonl", records))
    files.append(emit_plotdata(records, out / "cells.csv"))
    summary = _dichotomy_summary(cfg, records)
    path = out / "summary.json"
    path.write_text(json.dumps(summary, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    files.append(path)
    series = {}
    for alpha in cfg.alphas:
        series[f"alpha={alpha:g} GSE"] = [(c["N"], c["median_gse"]) for c in summary["cells"]
                                         if c["alpha"] == alpha]
    files.append(svg_line_plot(series, out / "plot_gse.svg", "median GSE by size", "N", "GSE"))
    manifest.files = sorted(str(f.name) for f in files) + ["manifest.json"]
    manifest.finished = _now()
    manifest.write(out)
    return manifest


def frechet_replica(cfg: ExperimentConfig, alpha: float, N: int, key: tuple[int, int]) -> dict:
    rng = np.random.default_rng(replica_seed(cfg.seed, key))
    spec = cfg.model_for(alpha)
    t = generate(rng, spec, N)[0]
    lam = lambda_stat(t, spec.scales(N)[0])
    return {"N": N, "replica": key[1], "lambda": lam.lam,
            "argmax": list(lam.argmax_tuple) if lam.argmax_tuple else None}


def ks_distance(samples: Sequence[float], alpha: float) -> tuple[float, float]:
    res = kstest(np.asarray(samples, dtype=float), lambda u: frechet_cdf(u, alpha))
    return float(res.statistic), float(res.pvalue)


def run_frechet(cfg: ExperimentConfig, threads: int = 1, deterministic: bool = True) -> RunManifest:
    """Replicated ``Lambda`` samples per size and their KS distance to Frechet(alpha).

    Uses the first entry of ``alphas`` (or the first layer's tail index).
    """
    alpha = cfg.alphas[0] if cfg.alphas else cfg.model.layers[0].tail.alpha
    if alpha is None:
        raise ConfigError("the Frechet study needs a heavy-tailed alpha")
    out = _prepare(cfg)
    manifest = RunManifest(cfg.hash(), __version__, _now())
    tasks = [(N, (iN, r)) for iN, N in enumerate(cfg.sizes) for r in range(cfg.replicas)]
    manifest.seeds = [{"N": N, "replica": k[1], "entropy": cfg.seed, "spawn_key": list(k)}
                      for N, k in tasks]
    records = _map(lambda t: frechet_replica(cfg, alpha, *t), tasks,
                   1 if deterministic else threads)
    rows = []
    for N in cfg.sizes:
        lam = [r["lambda"] for r in records if r["N"] == N]
        ks, pv = ks_distance(lam, alpha)
        rows.append({"N": N, "n": len(lam), "ks": ks, "pvalue": pv,
                     "median_lambda": float(np.median(lam)),
                     "frechet_median": math.log(2.0) ** (-1.0 / alpha)})
    files = dump_config(cfg, out)
    files.append(write_jsonl(out / "lambdas.jsonl", records))
    files.append(emit_plotdata(rows, out / "ks.csv", FRECHET_COLUMNS))
    path = out / "summary.json"
    path.write_text(json.dumps({"alpha": alpha, "rows": rows}, sort_keys=True, indent=2) + "\n")
    files.append(path)
    files.append(svg_line_plot({"KS distance": [(r["N"], r["ks"]) for r in rows]},
                               out / "plot_ks.svg", f"KS distance to Frechet({alpha:g})", "N", "KS"))
    manifest.files = sorted(str(f.name) for f in files) + ["manifest.json"]
    manifest.finished = _now()
    manifest.write(out)
    return manifest


def jsonable(obj: Any) -> Any:
    """Convert numpy scalars and tuples for ``json.dumps``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
