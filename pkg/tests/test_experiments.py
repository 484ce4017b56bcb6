import csv
import hashlib
import json

import numpy as np
import pytest

from heavyspin.cli import main
from heavyspin.disorder import Layer, MixtureSpec
from heavyspin.errors import ConfigError
from heavyspin.experiments import (DICHOTOMY_COLUMNS, EstimatorSettings, ExperimentConfig,
                                   dump_config, emit_plotdata, ks_distance, load_config,
                                   replica_seed, run_dichotomy, run_frechet)
from heavyspin.tails import TailLaw


def _cfg(tmp_path, name="run", **kw):
    model = MixtureSpec((Layer(2, 1.0, TailLaw.heavy(1.5)),), beta=1.0)
    base = dict(model=model, sizes=(12, 20), replicas=2, alphas=(1.5, 4.0, 6.0),
                estimator=EstimatorSettings(samples=400, tap_grid=16), seed=7,
                out=str(tmp_path / name))
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_roundtrip_and_hash(tmp_path):
    cfg = _cfg(tmp_path)
    paths = dump_config(cfg, tmp_path)
    for p in paths:
        assert load_config(p) == cfg
    assert cfg.hash() == hashlib.sha256(cfg.canonical_json().encode()).hexdigest()
    assert cfg.with_overrides(seed=8).hash() != cfg.hash()
    assert cfg.with_overrides(seed=None) == cfg


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        _cfg(tmp_path, replicas=0)
    with pytest.raises(ConfigError):
        _cfg(tmp_path, sizes=(1,))
    with pytest.raises(ConfigError):
        EstimatorSettings(kind="magic")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": _cfg(tmp_path).model.to_dict(), "bogus": 1})
    bad = tmp_path / "bad.toml"
    bad.write_text("this is = = not toml")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_replica_streams_are_independent():
    a = np.random.default_rng(replica_seed(1, (0, 0, 0))).random(4)
    b = np.random.default_rng(replica_seed(1, (0, 0, 1))).random(4)
    c = np.random.default_rng(replica_seed(1, (0, 0, 0))).random(4)
    assert not np.array_equal(a, b) and np.array_equal(a, c)


def test_emit_plotdata(tmp_path):
    path = emit_plotdata([], tmp_path / "empty.csv")
    assert path.read_text().strip().split(",") == DICHOTOMY_COLUMNS
    path = emit_plotdata([{"alpha": 1.5, "N": 10, "extra": 1}], tmp_path / "one.csv")
    rows = list(csv.DictReader(path.open()))
    assert rows[0]["alpha"] == "1.5" and rows[0]["gse"] == ""


def test_dichotomy_outputs_and_determinism(tmp_path):
    m1 = run_dichotomy(_cfg(tmp_path, "a"))
    m2 = run_dichotomy(_cfg(tmp_path, "b"), threads=4, deterministic=False)
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "records.jsonl").read_bytes() == (b / "records.jsonl").read_bytes()
    assert m1.config_hash != m2.config_hash  # output directories differ
    for name in m1.files:
        assert (a / name).exists()
    recs = [json.loads(l) for l in (a / "records.jsonl").read_text().splitlines()]
    assert len(recs) == 3 * 2 * 2
    regimes = {r["alpha"]: r["regime"] for r in recs}
    assert regimes == {1.5: "subcritical", 4.0: "critical_light", 6.0: "finite_moment"}
    for r in recs:
        # a sample mean of exp(beta H) never exceeds exp(beta max H); beta = 1 here
        assert r["F_hat"] <= r["gse"] + 1e-12
    summary = json.loads((a / "summary.json").read_text())
    assert len(summary["cells"]) == 6
    manifest = json.loads((a / "manifest.json").read_text())
    assert len(manifest["seeds"]) == 12 and manifest["config_hash"] == m1.config_hash


def test_frechet_run(tmp_path):
    cfg = _cfg(tmp_path, "f", sizes=(30,), replicas=300, alphas=(1.5,))
    run_frechet(cfg)
    rows = list(csv.DictReader((tmp_path / "f" / "ks.csv").open()))
    assert float(rows[0]["ks"]) < 0.15
    ks, pv = ks_distance([1.0, 2.0, 3.0], 1.5)
    assert 0.0 < ks < 1.0 and 0.0 <= pv <= 1.0


def test_cli_nim_and_parisi(capsys):
    assert main(["nim-curve", "--p", "2", "--h-min", "2", "--h-max", "2", "--points", "1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "h,f_p,q_star,g_p"
    assert float(out[1].split(",")[1]) == pytest.approx(0.153426409720027345, abs=1e-12)
    assert main(["parisi-solve", "--xi", "2:1", "--beta", "0.5"]) == 0
    assert json.loads(capsys.readouterr().out)["value"] == pytest.approx(0.125, abs=1e-12)


def test_cli_exit_codes(capsys):
    assert main(["parisi-solve", "--xi", "2:x", "--beta", "1"]) == 2
    assert main(["nim-curve", "--p", "2", "--points", "0"]) == 2
    assert "error" in capsys.readouterr().err.lower()


def test_cli_simulate_and_split_report(tmp_path, capsys):
    args = ["--N", "16", "--alpha", "1.5", "--replicas", "2", "--seed", "3"]
    assert main(["simulate", *args, "--samples", "200", "--out", str(tmp_path)]) == 0
    recs = [json.loads(l) for l in (tmp_path / "simulate.jsonl").read_text().splitlines()]
    assert len(recs) == 2 and recs[0]["gse_method"] == "eigen_p2"
    assert main(["split-report", *args]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and "has_intersections" in json.loads(lines[0])


def test_cli_tap_curve(capsys):
    assert main(["tap-curve", "--alpha", "4", "--beta", "1", "--lam", "2", "--N", "100",
                 "--xi", "2:1", "--grid", "20"]) == 0
    last = capsys.readouterr().out.splitlines()[-1]
    assert json.loads(last)["qstar"] >= 0.0


def test_cli_dichotomy_deterministic(tmp_path, capsys):
    args = ["dichotomy", "--p", "2", "--sizes", "10", "--replicas", "1", "--samples", "200",
            "--tap-grid", "12", "--seed", "5", "--deterministic"]
    assert main([*args, "--out", str(tmp_path / "x")]) == 0
    assert main([*args, "--out", str(tmp_path / "y")]) == 0
    x = (tmp_path / "x" / "records.jsonl").read_bytes()
    assert x == (tmp_path / "y" / "records.jsonl").read_bytes()
