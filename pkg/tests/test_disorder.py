import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heavyspin.disorder import (CouplingTensor, Hamiltonian, Layer, MixtureSpec, colex_rank,
                                generate, gradient, hamiltonian, layer_factor, load_tensor,
                                multiset_indices, save_tensor, to_sphere)
from heavyspin.errors import BudgetExceeded, ConfigError
from heavyspin.tails import TailLaw, num_multisets


def _rng(seed=0):
    return np.random.default_rng(seed)


def _mixed(ps=(2, 3), tails=None, beta=1.0):
    tails = tails or [TailLaw.gaussian()] * len(ps)
    return MixtureSpec(tuple(Layer(p, 0.7 + 0.2 * i, t) for i, (p, t) in enumerate(zip(ps, tails))), beta)


def test_colex_rank_matches_enumeration():
    for N, p in [(5, 2), (4, 3), (3, 4)]:
        idx = multiset_indices(N, p)
        assert len(idx) == num_multisets(N, p)
        assert [colex_rank(r) for r in idx] == list(range(len(idx)))
        assert {tuple(r) for r in idx} == set(itertools.combinations_with_replacement(range(N), p))


def test_generate_sizes_and_budget():
    t = generate(_rng(), MixtureSpec.pure(2, TailLaw.gaussian()), 3)
    assert len(t) == 1 and t[0].M == 6
    with pytest.raises(BudgetExceeded):
        generate(_rng(), MixtureSpec.pure(3, TailLaw.gaussian()), 100, budget=1000)
    with pytest.raises(ConfigError):
        generate(_rng(), MixtureSpec.pure(3, TailLaw.gaussian()), 2)


def test_spec_validation():
    g = TailLaw.gaussian()
    with pytest.raises(ConfigError):
        MixtureSpec((Layer(2, 1.0, g), Layer(2, 1.0, g)))
    with pytest.raises(ConfigError):
        MixtureSpec((Layer(2, 0.0, g),))
    with pytest.raises(ConfigError):
        MixtureSpec((Layer(2, 1.0, g),), beta=-1)
    spec = _mixed(tails=[TailLaw.heavy(1.5), TailLaw.rademacher()])
    assert MixtureSpec.from_dict(spec.to_dict()) == spec


def test_coefficient_variance_profile():
    # multiplicity-weighted coefficient (p!/k!)^{1/2} H_p has variance p!/k!
    rng = _rng(3)
    spec = MixtureSpec.pure(2, TailLaw.gaussian())
    off, diag = [], []
    for _ in range(500):
        t = generate(rng, spec, 200)[0]
        c = t.coefficients()
        mask = t.kfact == 1
        diag.append(c[~mask])
        if len(off) < 5:
            off.append(c[mask])
    off, diag = np.concatenate(off)[:100_000], np.concatenate(diag)[:100_000]
    for vals, target in ((off, 2.0), (diag, 1.0)):
        sd = math.sqrt(2 * target ** 2 / (len(vals) - 1))
        assert abs(np.var(vals) - target) < 3 * sd


def test_hamiltonian_zero_and_single_term():
    N = 10
    spec = MixtureSpec.pure(2, TailLaw.gaussian())
    sc = spec.scales(N)
    zero = CouplingTensor(N, 2, np.zeros(num_multisets(N, 2)), TailLaw.gaussian())
    s = to_sphere(_rng().standard_normal(N))
    assert hamiltonian([zero], spec, sc, s) == 0.0
    assert np.all(gradient([zero], spec, sc, s) == 0.0)
    a = 1.7
    base = np.zeros(num_multisets(N, 2))
    base[colex_rank((0, 1))] = a
    sigma = np.zeros(N)
    sigma[:2] = math.sqrt(N / 2)
    b = sc[0].b
    expected = (math.sqrt(N) / b) * N ** -0.5 * 2 * (1 / math.sqrt(2)) * a * (N / 2)
    got = hamiltonian([CouplingTensor(N, 2, base, TailLaw.gaussian())], spec, sc, sigma)
    assert got == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("N", [4, 17, 32])
def test_hamiltonian_matches_dense_double_loop(N):
    tail = TailLaw.heavy(1.5)
    spec = MixtureSpec.pure(2, tail, gamma=1.3)
    t = generate(_rng(N), spec, N)
    sc = spec.scales(N)
    s = to_sphere(_rng(N + 1).standard_normal(N))
    T = t[0].dense()
    total = 0.0
    for i in range(N):
        for j in range(N):
            total += T[i, j] * s[i] * s[j]
    expected = layer_factor(1.3, sc[0]) * total
    assert hamiltonian(t, spec, sc, s) == pytest.approx(expected, rel=1e-10)


def test_general_p_matches_dense_sum():
    for p, N in ((3, 7), (4, 5)):
        spec = MixtureSpec.pure(p, TailLaw.gaussian())
        t = generate(_rng(p), spec, N)
        s = to_sphere(_rng(p + 10).standard_normal(N))
        T = t[0].dense()
        full = T
        for _ in range(p):
            full = full @ s
        expected = layer_factor(1.0, spec.scales(N)[0]) * full
        assert hamiltonian(t, spec, None, s) == pytest.approx(expected, rel=1e-10)


def test_batch_values_match_scalar():
    spec = _mixed((2, 3, 4))
    N = 9
    H = Hamiltonian(generate(_rng(5), spec, N), spec)
    X = to_sphere(_rng(6).standard_normal((7, N)))
    assert np.allclose(H.values(X), [H(x) for x in X], rtol=1e-12, atol=1e-12)


@given(st.integers(2, 4), st.floats(0.1, 3.0), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_homogeneity_and_parity(p, scale, seed):
    N = 6
    spec = MixtureSpec.pure(p, TailLaw.gaussian())
    H = Hamiltonian(generate(_rng(seed), spec, N), spec)
    s = _rng(seed + 1).standard_normal(N)
    assert H(scale * s) == pytest.approx(scale ** p * H(s), rel=1e-10, abs=1e-10)
    assert H(-s) == pytest.approx((-1) ** p * H(s), rel=1e-12, abs=1e-12)


def test_relabeling_symmetry():
    N, p = 7, 3
    spec = MixtureSpec.pure(p, TailLaw.heavy(2.5))
    t = generate(_rng(9), spec, N)[0]
    perm = _rng(10).permutation(N)
    base = np.empty_like(t.base)
    for r, tup in enumerate(t.indices):
        base[colex_rank(perm[tup])] = t.base[r]
    t2 = t.with_base(base)
    s = to_sphere(_rng(11).standard_normal(N))
    s2 = np.empty(N)
    s2[perm] = s
    assert hamiltonian([t2], spec, None, s2) == pytest.approx(hamiltonian([t], spec, None, s), rel=1e-12)


def _fd_check(spec, N, seed, h=1e-5, states=5):
    H = Hamiltonian(generate(_rng(seed), spec, N), spec)
    worst = 0.0
    for k in range(states):
        s = to_sphere(_rng(seed + 100 + k).standard_normal(N))
        g = H.gradient(s)
        fd = np.array([(H(s + h * e) - H(s - h * e)) / (2 * h) for e in np.eye(N)])
        worst = max(worst, np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(g))))
    return worst


def test_gradient_finite_differences_pure_p3():
    assert _fd_check(MixtureSpec.pure(3, TailLaw.gaussian()), 16, 1) <= 1e-5


def test_gradient_p2_is_twice_matrix_product():
    spec = MixtureSpec.pure(2, TailLaw.gaussian())
    H = Hamiltonian(generate(_rng(2), spec, 12), spec)
    s = to_sphere(_rng(3).standard_normal(12))
    assert np.allclose(H.gradient(s), 2 * H.matrix() @ s, rtol=1e-13)
    assert H(s) == pytest.approx(s @ H.matrix() @ s, rel=1e-13)


def test_gradient_many_states_mixed():
    spec = _mixed((2, 3), [TailLaw.heavy(1.8), TailLaw.gaussian()])
    assert _fd_check(spec, 10, 4, states=100) <= 1e-5


def test_dimension_mismatch():
    spec = MixtureSpec.pure(2, TailLaw.gaussian())
    H = Hamiltonian(generate(_rng(), spec, 5), spec)
    with pytest.raises(ConfigError):
        H(np.ones(6))
    t1 = generate(_rng(), spec, 5)
    with pytest.raises(ConfigError):
        Hamiltonian(t1 + t1, spec)


def test_save_load_roundtrip(tmp_path):
    spec = MixtureSpec.pure(3, TailLaw.heavy(1.2))
    t = generate(_rng(8), spec, 9, seed=123)[0]
    path = tmp_path / "t.bin"
    save_tensor(t, path)
    u = load_tensor(path)
    assert u.base.tobytes() == t.base.tobytes()
    assert (u.N, u.p, u.tail, u.seed) == (t.N, t.p, t.tail, 123)
    path.write_bytes(b"garbage!" + path.read_bytes()[8:])
    with pytest.raises(ConfigError):
        load_tensor(path)


def test_sphere_projection_norm():
    s = to_sphere(_rng().standard_normal((5, 33)))
    assert np.allclose(np.sum(s * s, axis=1), 33, rtol=1e-12)
