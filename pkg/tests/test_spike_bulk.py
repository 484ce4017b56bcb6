import math

import numpy as np
import pytest

from heavyspin.disorder import Layer, MixtureSpec, generate
from heavyspin.errors import ConfigError
from heavyspin.spike_bulk import (SpikeSet, amgm_max, bulk_moment_report, e_nim, fit_power_law,
                                  nim_amplitudes, reconstruct, spike_diagnostics, spike_threshold,
                                  split, split_all)
from heavyspin.tails import ExtremeStat, TailLaw, lambda_stat


def _heavy(p=2, alpha=1.5, N=40, seed=0):
    spec = MixtureSpec.pure(p, TailLaw.heavy(alpha))
    return spec, generate(np.random.default_rng(seed), spec, N)[0], spec.scales(N)[0]


def test_split_partitions_at_threshold():
    spec, t, sc = _heavy()
    spikes, bulk = split(t, sc)
    u = spike_threshold(sc, 1.5, 0.1)
    assert spikes.thresholds == {2: u}
    assert np.all(np.abs(bulk.entries()) <= u)
    assert all(abs(e.value) > u for e in spikes.entries)
    assert np.count_nonzero(bulk.base == 0) == len(spikes)


def test_reconstruction_is_bitwise():
    for seed in range(20):
        spec, t, sc = _heavy(p=2 + seed % 3, alpha=1.0 + 0.2 * (seed % 5), N=12, seed=seed)
        spikes, bulk = split(t, sc, epsilon0=0.05)
        assert reconstruct(spikes, bulk).base.tobytes() == t.base.tobytes()


def test_finite_moment_layers_have_no_spikes():
    spec = MixtureSpec.pure(2, TailLaw.heavy(6.0))
    t = generate(np.random.default_rng(0), spec, 20)[0]
    spikes, bulk = split(t, spec.scales(20)[0])
    assert len(spikes) == 0 and bulk is t


def test_split_all_tracks_layers():
    spec = MixtureSpec((Layer(2, 1.0, TailLaw.heavy(1.2)), Layer(3, 0.5, TailLaw.heavy(2.0))))
    ts = generate(np.random.default_rng(3), spec, 15)
    spikes, bulks = split_all(ts, spec.scales(15))
    assert {e.layer for e in spikes.entries} <= {0, 1}
    for i, (t, b) in enumerate(zip(ts, bulks)):
        assert reconstruct(spikes, b, layer=i).base.tobytes() == t.base.tobytes()


def test_split_argument_checks():
    spec, t, sc = _heavy()
    with pytest.raises(ConfigError):
        split(t, sc, epsilon0=0.0)
    with pytest.raises(ConfigError):
        split(t, MixtureSpec.pure(2, TailLaw.heavy(1.5)).scales(41)[0])


@pytest.mark.parametrize("tuples,repeats,intersections", [
    ([(0, 1), (2, 3)], False, False),
    ([(0, 1), (1, 2)], False, True),
    ([(4, 4), (0, 1)], True, False),
])
def test_diagnostics_flags(tuples, repeats, intersections):
    d = spike_diagnostics(SpikeSet.from_tuples(tuples), N=100)
    assert d["has_repeats"] is repeats and d["has_intersections"] is intersections
    assert d["count"] == len(tuples)
    assert d["support_size"] == len({i for t in tuples for i in t})


def test_amgm_max_examples():
    assert amgm_max([(10.0, 3)], 1.0) == (pytest.approx(1.92450089729875255, rel=1e-14), 0)
    assert amgm_max([], 0.5) == (0.0, None)
    v, i = amgm_max([(1.0, 2), (-4.0, 2), (4.0, 2)], 0.5)
    assert (v, i) == (pytest.approx(1.0), 1)
    with pytest.raises(ConfigError):
        amgm_max([(1.0, 2)], 1.5)
    with pytest.raises(ConfigError):
        amgm_max([(1.0, 1)], 0.5)


def test_nim_amplitudes_and_energy():
    spec = MixtureSpec.pure(2, TailLaw.heavy(1.5), gamma=2.0, beta=0.5)
    sc = spec.scales(30)[0]
    lam = ExtremeStat(3.0, (0, 1), 1.5)
    amps = nim_amplitudes(spec, [lam], [sc])
    assert amps == [(pytest.approx(0.5 * 2.0 * 1.0 * 3.0), 2)]
    assert e_nim(spec, [lam], [sc], 0.4) == pytest.approx(3.0 * 0.2)
    gauss = MixtureSpec.pure(2, TailLaw.gaussian())
    assert e_nim(gauss, [None], gauss.scales(30), 0.4) == 0.0


def test_largest_coupling_is_a_spike():
    spec, t, sc = _heavy(N=200, seed=5)
    spikes, _ = split(t, sc)
    d = spike_diagnostics(spikes, 200)
    assert d["count"] >= 1
    assert lambda_stat(t, sc).argmax_tuple in {e.tuple for e in spikes.entries}


def test_bulk_report_and_power_law():
    spec, t, sc = _heavy(N=60)
    _, bulk = split(t, sc)
    rep = bulk_moment_report([bulk], [sc])[0]
    u = spike_threshold(sc, 1.5, 0.1)
    assert rep.max_abs <= math.sqrt(60) / sc.b * u * (1 + 1e-12)
    assert rep.bound_max == pytest.approx(60 ** (0.5 - 0.1 / 1.5))
    C, e = fit_power_law([10, 100, 1000], [3 * 10 ** 0.7, 3 * 100 ** 0.7, 3 * 1000 ** 0.7])
    assert C == pytest.approx(3.0) and e == pytest.approx(0.7)
