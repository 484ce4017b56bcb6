"""Command-line entry point ``heavyspin``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, nim
from .disorder import Layer, MixtureSpec, generate
from .errors import ConfigError, NumericalError
from .experiments import (ExperimentConfig, default_alphas, jsonable, load_config,
                          replica_seed, run_dichotomy, run_frechet)
from .montecarlo import free_energy_plain, free_energy_stratified, gse_ascent, gse_eigen_p2
from .parisi import MixtureFunction, minimize_cs
from .spike_bulk import DEFAULT_EPSILON0, bulk_moment_report, spike_diagnostics, split_all
from .tails import ExtremeStat, TailLaw, TailScales, lambda_stat, quantile_scale
from .tap import tap_optimize

log = logging.getLogger("heavyspin")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _tail(args) -> TailLaw:
    if args.tail == "heavy":
        if args.alpha is None:
            raise ConfigError("--alpha is required for heavy tails")
        return TailLaw.heavy(args.alpha)
    return TailLaw("finite", dist=args.tail)


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")
    log.info("wrote %s", out / name)


def _csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_nim_curve(args) -> int:
    if args.points < 1 or args.h_min < 0 or args.h_max < args.h_min:
        raise ConfigError("need points >= 1 and 0 <= h-min <= h-max")
    if args.log:
        if args.h_min <= 0:
            raise ConfigError("--log needs h-min > 0")
        hs = np.geomspace(args.h_min, args.h_max, args.points)
    else:
        hs = np.linspace(args.h_min, args.h_max, args.points)
    rows = []
    for h in hs:
        v = nim.f_closed(args.p, float(h))
        rows.append({"h": float(h), "f_p": v.value, "q_star": v.qstar, "g_p": nim.g(args.p, float(h))})
    _emit(_csv(rows, ["h", "f_p", "q_star", "g_p"]), args.out, "nim_curve.csv")
    return EXIT_OK


def cmd_parisi_solve(args) -> int:
    xi = MixtureFunction.parse(args.xi)
    res = minimize_cs(xi, args.beta, k_max=args.k, tol=args.tol)
    d = res.to_dict()
    d["xi"] = xi.to_dict()
    d["beta"] = args.beta
    if args.convention == "per_beta":
        if args.beta == 0:
            raise ConfigError("the 1/beta convention is undefined at beta = 0")
        d["value"] = res.value / args.beta
    d["convention"] = args.convention
    _emit(json.dumps(jsonable(d), sort_keys=True, indent=2) + "\n", args.out, "parisi.json")
    return EXIT_OK


def _tap_inputs(args):
    tail = TailLaw.heavy(args.alpha)
    spec = MixtureSpec.pure(args.p, tail, args.gamma, args.beta)
    sc = quantile_scale(tail, args.N, args.p)
    if args.c is not None:
        if args.c <= 0:
            raise ConfigError("--c must be positive")
        sc = TailScales(sc.N, sc.p, sc.M, args.c * math.sqrt(sc.N), args.c, sc.b, sc.regime)
    xi = MixtureFunction.parse(args.xi) if args.xi else MixtureFunction({})
    return xi, spec, [ExtremeStat(args.lam, None, args.alpha)], [sc]


def cmd_tap_curve(args) -> int:
    xi, spec, lams, scales = _tap_inputs(args)
    dec = tap_optimize(xi, spec, lams, scales, args.beta, grid=args.grid)
    rows = [c.to_dict() for c in dec.curve]
    summary = {"qstar": dec.qstar, "value": dec.value, "regime": scales[0].regime.value,
               "amplitudes": [list(a) for a in dec.amplitudes], "best": dec.best.to_dict()}
    text = _csv(rows, ["q", "entropy", "bulk", "spike", "total"])
    if args.out is None:
        sys.stdout.write(text)
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    else:
        _emit(text, args.out, "tap_curve.csv")
        _emit(json.dumps(summary, sort_keys=True, indent=2) + "\n", args.out, "tap_summary.json")
    return EXIT_OK


def _simulate_one(args, spec: MixtureSpec, r: int) -> dict:
    rng = np.random.default_rng(replica_seed(args.seed, (0, 0, r)))
    N, beta = args.N, spec.beta
    scales = spec.scales(N)
    tensors = generate(rng, spec, N)
    layer, sc = spec.layers[0], scales[0]
    rec = {"replica": r, "N": N, "p": layer.p, "alpha": layer.tail.alpha, "beta": beta,
           "regime": sc.regime.value}
    lam = lambda_stat(tensors[0], sc) if layer.tail.is_heavy else None
    spikes, _ = split_all(tensors, scales, args.epsilon0)
    if args.estimator == "stratified" and len(spikes):
        fe = free_energy_stratified(tensors, spec, scales, beta, spikes, None, args.n_per_slice, rng)
    else:
        fe = free_energy_plain(tensors, spec, scales, beta, args.samples, rng)
    gse = (gse_eigen_p2(tensors, spec, scales) if layer.p == 2
           else gse_ascent(tensors, spec, scales, args.restarts, rng, spike=spikes))
    rec.update({"F_hat": fe.value, "stderr": fe.stderr, "estimator": fe.estimator.value,
                "gse": gse.value, "gse_method": gse.method.value, "spikes": len(spikes)})
    if lam is not None:
        w = 1.0 if sc.regime.extreme_scaled else sc.c
        h = abs(layer.gamma) * w * lam.lam
        rec.update({"lambda": lam.lam, "argmax": list(lam.argmax_tuple) if lam.argmax_tuple else None,
                    "pred_f": nim.f(layer.p, beta * h), "pred_g": nim.g(layer.p, h)})
    else:
        rec.update({"lambda": None, "argmax": None, "pred_f": None, "pred_g": None})
    return rec


def cmd_simulate(args) -> int:
    if args.replicas < 1:
        raise ConfigError("--replicas must be >= 1")
    if args.estimator not in ("plain", "stratified"):
        raise ConfigError(f"unknown estimator {args.estimator!r}")
    spec = MixtureSpec.pure(args.p, _tail(args), args.gamma, args.beta)
    records = [_simulate_one(args, spec, r) for r in range(args.replicas)]
    text = "".join(json.dumps(jsonable(r), sort_keys=True) + "\n" for r in records)
    _emit(text, args.out, "simulate.jsonl")
    return EXIT_OK


def cmd_split_report(args) -> int:
    spec = MixtureSpec.pure(args.p, _tail(args), args.gamma, 1.0)
    lines = []
    for r in range(args.replicas):
        rng = np.random.default_rng(replica_seed(args.seed, (0, 0, r)))
        scales = spec.scales(args.N)
        tensors = generate(rng, spec, args.N)
        spikes, bulks = split_all(tensors, scales, args.epsilon0)
        rec = {"replica": r, "N": args.N, **spike_diagnostics(spikes, args.N),
               "bulk": [b.to_dict() for b in bulk_moment_report(bulks, scales, args.epsilon0)],
               "tuples": [list(e.tuple) for e in spikes.entries]}
        lines.append(json.dumps(jsonable(rec), sort_keys=True) + "\n")
    _emit("".join(lines), args.out, "split_report.jsonl")
    return EXIT_OK


def _experiment_config(args, alphas_for) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        if args.p is None:
            raise ConfigError("give --config or at least --p")
        layer = Layer(args.p, args.gamma if args.gamma is not None else 1.0,
                      TailLaw.heavy(args.alpha if args.alpha is not None else 1.5))
        cfg = ExperimentConfig(MixtureSpec((layer,), args.beta if args.beta is not None else 1.0),
                               alphas=alphas_for(args.p))
    est = {}
    for k in ("samples", "n_per_slice", "tap_grid"):
        if getattr(args, k, None) is not None:
            est[k] = getattr(args, k)
    if getattr(args, "estimator", None) is not None:
        est["kind"] = args.estimator
    return cfg.with_overrides(
        sizes=tuple(args.sizes) if args.sizes else None,
        replicas=args.replicas, seed=args.seed_given,
        alphas=tuple(args.alphas) if args.alphas else None,
        beta=args.beta if args.config is not None else None,
        out=str(args.out) if args.out is not None else None, **est)


def cmd_frechet(args) -> int:
    cfg = _experiment_config(args, lambda p: (args.alpha if args.alpha is not None else 1.5,))
    m = run_frechet(cfg, threads=args.threads, deterministic=args.deterministic)
    print(json.dumps({"out": cfg.out, "files": m.files, "config_hash": m.config_hash}))
    return EXIT_OK


def cmd_dichotomy(args) -> int:
    cfg = _experiment_config(args, default_alphas)
    m = run_dichotomy(cfg, threads=args.threads, deterministic=args.deterministic)
    print(json.dumps({"out": cfg.out, "files": m.files, "config_hash": m.config_hash}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for replica sweeps")
    common.add_argument("--deterministic", action="store_true",
                        help="sequential execution for bit-identical outputs")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="heavyspin", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nim-curve", parents=[common], help="f_p(h), q*, g_p(h) on an h grid")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--h-min", type=float, default=0.0)
    p.add_argument("--h-max", type=float, default=10.0)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--log", action="store_true", help="logarithmic spacing")
    p.set_defaults(func=cmd_nim_curve)

    p = sub.add_parser("parisi-solve", parents=[common], help="minimize the Crisanti-Sommers functional")
    p.add_argument("--xi", required=True, help='mixture as "p:weight,..."')
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--k", type=int, default=8, help="maximal RSB depth")
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--convention", choices=("annealed", "per_beta"), default="annealed")
    p.set_defaults(func=cmd_parisi_solve)

    p = sub.add_parser("tap-curve", parents=[common], help="entropy, bulk and spike terms over q")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--lam", type=float, required=True, help="rescaled maximal coupling")
    p.add_argument("--N", type=int, default=1000, help="size used for the scales")
    p.add_argument("--c", type=float, default=None, help="override the ratio c")
    p.add_argument("--xi", default="", help='bulk mixture "p:weight,..." (empty for none)')
    p.add_argument("--grid", type=int, default=200)
    p.set_defaults(func=cmd_tap_curve)

    def model_flags(p, alpha_required=False):
        p.add_argument("--p", type=int, default=2)
        p.add_argument("--alpha", type=float, required=alpha_required)
        p.add_argument("--tail", choices=("heavy", "gaussian", "rademacher"), default="heavy")
        p.add_argument("--gamma", type=float, default=1.0)
        p.add_argument("--N", type=int, required=True)
        p.add_argument("--replicas", type=int, default=1)
        p.add_argument("--epsilon0", type=float, default=DEFAULT_EPSILON0)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo per disorder replica")
    model_flags(p)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--n-per-slice", type=int, default=200)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--estimator", choices=("plain", "stratified"), default="plain")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("split-report", parents=[common], help="spike/bulk diagnostics per replica")
    model_flags(p)
    p.set_defaults(func=cmd_split_report)

    for name, func, text in (("frechet", cmd_frechet, "KS distance of Lambda to Frechet"),
                             ("dichotomy", cmd_dichotomy, "alpha sweep across 2p")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--config", type=Path, default=None, help="TOML or JSON config")
        p.add_argument("--p", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--alphas", type=_floats, default=None, help="comma-separated")
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--sizes", type=_ints, default=None, help="comma-separated")
        p.add_argument("--replicas", type=int, default=None)
        if name == "dichotomy":
            p.add_argument("--estimator", choices=("plain", "stratified"), default=None)
            p.add_argument("--samples", type=int, default=None)
            p.add_argument("--n-per-slice", type=int, default=None)
            p.add_argument("--tap-grid", type=int, default=None)
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.seed_given = args.seed
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
