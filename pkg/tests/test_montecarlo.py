import math

import numpy as np
import pytest
from scipy.special import logsumexp

from heavyspin import nim
from heavyspin.disorder import CouplingTensor, MixtureSpec, colex_rank, generate
from heavyspin.errors import ConfigError
from heavyspin.montecarlo import (default_strata, free_energy_plain, free_energy_stratified,
                                  gse_ascent, gse_eigen_p2, log_cell_masses, sample_sphere)
from heavyspin.spike_bulk import SpikeSet, split_all
from heavyspin.tails import TailLaw, num_multisets


def _single_spike(N, h):
    """Gaussian-normalized p=2 layer whose only coupling gives spike strength ``h``."""
    base = np.zeros(num_multisets(N, 2))
    base[colex_rank((0, 1))] = h * math.sqrt(N) / math.sqrt(2)
    spec = MixtureSpec.pure(2, TailLaw.gaussian())
    return spec, [CouplingTensor(N, 2, base, TailLaw.gaussian())]


def test_sample_sphere_radius_and_center():
    x = sample_sphere(np.random.default_rng(0), 20, 5000)
    assert np.allclose(np.linalg.norm(x, axis=1), math.sqrt(20))
    assert np.max(np.abs(x.mean(axis=0))) < 4 / math.sqrt(5000)
    y = sample_sphere(np.random.default_rng(0), 7, radius=2.0)
    assert y.shape == (7,) and np.linalg.norm(y) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        sample_sphere(np.random.default_rng(0), 0)


@pytest.mark.parametrize("N,d", [(50, 2), (400, 3), (5000, 2)])
def test_cell_masses_sum_to_one(N, d):
    assert logsumexp(log_cell_masses(default_strata(), N, d)) == pytest.approx(0.0, abs=1e-10)


def test_plain_estimator_basics():
    spec = MixtureSpec.pure(2, TailLaw.gaussian())
    ts = generate(np.random.default_rng(1), spec, 64)
    est = free_energy_plain(ts, spec, None, 0.0, 100, np.random.default_rng(2))
    assert est.value == 0.0
    est = free_energy_plain(ts, spec, None, 0.3, 20_000, np.random.default_rng(2))
    gse = gse_eigen_p2(ts, spec).value
    assert 0.0 < est.value <= 0.3 * gse
    assert est.stderr > 0.0
    again = free_energy_plain(ts, spec, None, 0.3, 20_000, np.random.default_rng(2))
    assert again == est
    with pytest.raises(ConfigError):
        free_energy_plain(ts, spec, None, 0.3, 1, np.random.default_rng(2))


def test_stratified_recovers_single_spike():
    spec, ts = _single_spike(400, 3.0)
    est = free_energy_stratified(ts, spec, None, 1.0, SpikeSet.from_tuples([(0, 1)]), None, 100,
                                 np.random.default_rng(0))
    assert est.value == pytest.approx(nim.f(2, 3.0), abs=0.03)
    plain = free_energy_plain(ts, spec, None, 1.0, 20_000, np.random.default_rng(0))
    assert plain.value < est.value - 0.3


def test_stratified_zero_temperature_is_zero():
    spec, ts = _single_spike(100, 2.0)
    est = free_energy_stratified(ts, spec, None, 0.0, SpikeSet.from_tuples([(0, 1)]), None, 10,
                                 np.random.default_rng(0))
    assert est.value == pytest.approx(0.0, abs=1e-12)


def test_stratified_without_spikes_falls_back():
    spec, ts = _single_spike(30, 2.0)
    with pytest.warns(RuntimeWarning):
        est = free_energy_stratified(ts, spec, None, 0.5, SpikeSet(), None, 10,
                                     np.random.default_rng(0))
    assert est.estimator.value == "plain"


def test_stratified_grid_validation():
    spec, ts = _single_spike(30, 2.0)
    with pytest.raises(ConfigError):
        free_energy_stratified(ts, spec, None, 1.0, SpikeSet.from_tuples([(0, 1)]), [0.5, 0.2], 10,
                               np.random.default_rng(0))


def test_ascent_is_lower_bound_close_to_eigenvalue():
    spec = MixtureSpec.pure(2, TailLaw.heavy(1.5))
    ts = generate(np.random.default_rng(4), spec, 48)
    sc = spec.scales(48)
    spikes, _ = split_all(ts, sc)
    exact = gse_eigen_p2(ts, spec, sc).value
    est = gse_ascent(ts, spec, sc, 3, np.random.default_rng(5), spike=spikes)
    assert est.value <= exact + 1e-12
    assert est.value == pytest.approx(exact, abs=1e-6)
    assert list(est.best_so_far) == sorted(est.best_so_far)
    assert est.restarts >= 3


def test_single_spike_ground_state():
    spec, ts = _single_spike(60, 5.0)
    assert gse_eigen_p2(ts, spec).value == pytest.approx(nim.g(2, 5.0), rel=1e-12)


def test_ascent_argument_checks():
    spec = MixtureSpec.pure(3, TailLaw.gaussian())
    ts = generate(np.random.default_rng(0), spec, 8)
    with pytest.raises(ConfigError):
        gse_ascent(ts, spec, None, 0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        gse_eigen_p2(ts, spec)
