import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs

from qfibounds import fisher
from qfibounds import numkernel as nk
from qfibounds import states as st
from qfibounds.errors import CapacityError, ValidationError


def _random_pair(seed, kind="qubits", N=2, rank=None):
    space = st.HilbertSpec(kind, N)
    s = nk.SeededStream(seed)
    rho = st.random_density_matrix(space, rank or space.dim, s.child(0))
    return rho, st.random_observable(space, s.child(1))


def _oracle_series(rho, A, n):
    """Plain double loop over eigenpairs."""
    lam, v = np.linalg.eigh(rho.mat)
    a = v.conj().T @ A.mat @ v
    out = 0.0
    for i in range(len(lam)):
        for j in range(len(lam)):
            geo = sum((1 - lam[i] - lam[j]) ** l for l in range(n + 1))
            out += 2 * (lam[i] - lam[j]) ** 2 * geo * abs(a[i, j]) ** 2
    return out


def test_qfi_examples():
    mixed = st.maximally_mixed(st.HilbertSpec.qubits(2))
    assert fisher.qfi_exact(mixed, st.collective_spin_observable(2)) == 0
    assert fisher.qfi_exact(st.ghz_state(3), st.collective_spin_observable(3)) == pytest.approx(9, abs=1e-12)
    assert fisher.qfi_exact(st.noisy_ghz(2, 0.5), st.collective_spin_observable(2)) == pytest.approx(4 / 3)
    with pytest.raises(ValidationError):
        fisher.qfi_exact(st.ghz_state(2), st.collective_spin_observable(3))


def test_ghz2_half_noise_series():
    # F_Q = 4/3, gaps F_Q/4^(n+1) from the depolarized gap law
    s = fisher.bounds_spectral(st.noisy_ghz(2, 0.5), st.collective_spin_observable(2), 3)
    np.testing.assert_allclose(s.orders, [1.0, 5 / 4, 4 / 3 - 1 / 48, 4 / 3 - 1 / 192], rtol=1e-12)
    assert s.rate.zeta == pytest.approx(0.25)


def test_trivial_series():
    s = fisher.bounds_spectral(st.ghz_state(4), st.collective_spin_observable(4), 5)
    np.testing.assert_allclose(s.orders, 16, atol=1e-9)
    assert s.rate.exact
    mixed = st.maximally_mixed(st.HilbertSpec.collective(5))
    s = fisher.bounds_spectral(mixed, st.number_difference_observable(5), 5)
    assert np.all(s.orders == 0) and s.qfi == 0


def test_polynomial_low_orders(rng):
    rho, A = _random_pair(3, N=3)
    r, a = rho.mat, A.mat
    f0 = 4 * np.trace(r @ nk.commutator(r, a) @ a).real
    f1 = 2 * f0 - 4 * np.trace(r @ r @ nk.commutator(r, a) @ a).real
    s = fisher.bounds_polynomial(rho, A, 1)
    np.testing.assert_allclose(s.orders, [f0, f1], rtol=1e-10)


def test_recursive_small_orders():
    assert fisher.bound_recursive([2.5], []) == 2.5
    assert fisher.bound_recursive([2.5, 1.0], [2.5]) == pytest.approx(4.0)
    with pytest.raises(ValidationError):
        fisher.bound_recursive([1.0], [1.0])


def test_multicopy_pure_qubit():
    psi = np.array([math.cos(0.3), math.sin(0.3) * np.exp(0.4j)])
    rho = st.pure(st.HilbertSpec.qubits(1), psi)
    A = st.collective_spin_observable(1)
    var = 4 * (np.vdot(psi, A.mat @ A.mat @ psi) - abs(np.vdot(psi, A.mat @ psi)) ** 2).real
    np.testing.assert_allclose(fisher.bounds_multicopy(rho, A, 2).orders, var, rtol=1e-10)
    assert fisher.qfi_exact(rho, A) == pytest.approx(var, rel=1e-10)


def test_multicopy_capacity():
    rho, A = _random_pair(1, N=3)
    with pytest.raises(CapacityError):
        fisher.bounds_multicopy(rho, A, 3)


@given(hs.integers(0, 10**6), hs.sampled_from([("qubits", 1), ("qubits", 2), ("collective", 3)]), hs.integers(1, 4))
def test_routes_agree(seed, kind, rank):
    space = st.HilbertSpec(*kind)
    rho, A = _random_pair(seed, *kind, rank=min(rank, space.dim))
    ref = fisher.bounds_spectral(rho, A, 4)
    scale = max(1.0, ref.qfi)
    for route in (fisher.bounds_polynomial, fisher.bounds_recursive):
        np.testing.assert_allclose(route(rho, A, 4).orders, ref.orders, rtol=1e-8, atol=1e-10 * scale)
    n_mc = 3 if space.dim <= 2 else 1
    np.testing.assert_allclose(fisher.bounds_multicopy(rho, A, n_mc).orders, ref.orders[: n_mc + 1], rtol=1e-8, atol=1e-10 * scale)
    for n in (0, 2):
        assert ref.orders[n] == pytest.approx(_oracle_series(rho, A, n), rel=1e-10, abs=1e-12)


@given(hs.integers(0, 10**6), hs.integers(1, 4), hs.integers(1, 16))
def test_monotone_series(seed, N, rank):
    space = st.HilbertSpec.qubits(N)
    rho, A = _random_pair(seed, "qubits", N, rank=min(rank, space.dim))
    s = fisher.bounds_spectral(rho, A, 8)
    assert s.is_monotone(slack=1e-9)
    assert np.all(s.gaps >= -1e-9)


@pytest.mark.parametrize("d_N", [2, 5, 10])
@pytest.mark.parametrize("p", [0.1, 0.25, 0.5])
def test_gap_law(d_N, p):
    d = 2**d_N
    rho, A = st.noisy_ghz(d_N, p), st.collective_spin_observable(d_N)
    s = fisher.bounds_spectral(rho, A, 8)
    law = s.qfi * ((1 - 2 / d) * p) ** (np.arange(9) + 1)
    np.testing.assert_allclose(s.gaps, law, rtol=1e-9)
    assert s.rate.zeta == pytest.approx(p * (1 - 2 / d), rel=1e-12)


def test_convergence_ratio_ghz10():
    s = fisher.bounds_spectral(st.noisy_ghz(10, 0.5), st.collective_spin_observable(10), 6)
    np.testing.assert_allclose(s.gaps[:-1] / s.gaps[1:], 1 / ((1 - 2 / 1024) * 0.5), rtol=1e-9)


def test_gamma_threshold():
    assert fisher.gamma_threshold(6, 1) == 6
    assert fisher.gamma_threshold(10, 3) == 28
    assert fisher.gamma_threshold(4, 4) == 16
    with pytest.raises(ValidationError):
        fisher.gamma_threshold(4, 5)


@given(hs.integers(1, 40))
def test_gamma_monotone_in_k(N):
    g = [fisher.gamma_threshold(N, k) for k in range(1, N + 1)]
    assert g[0] == N and g[-1] == N * N
    assert all(b >= a for a, b in zip(g, g[1:]))


def test_certify_depth():
    assert fisher.certify_depth(4.0, 4).certified_depth == 1
    assert fisher.certify_depth(0.0, 4).certified_depth == 1
    assert fisher.certify_depth(100.0, 10).certified_depth == 10
    w = fisher.certify_depth(29.0, 10)
    assert w.k == 3 and w.certified_depth == 4


def _analytic_pstar(N, k):
    # N^2 (1-p)^2 = Gamma (1 - p + 2p/2^N), solved as a quadratic in p
    g, c = fisher.gamma_threshold(N, k), 2.0 / 2**N
    a2, a1, a0 = N * N, -2 * N * N + g * (1 - c), N * N - g
    roots = np.roots([a2, a1, a0]).real
    return min(r for r in roots if 0 <= r <= 1)


@pytest.mark.parametrize("N", [4, 6, 10])
def test_pstar_qfi_matches_root(N):
    for k in (1, 2, N - 1):
        assert fisher.pstar(N, k, "qfi").value == pytest.approx(_analytic_pstar(N, k), abs=1e-8)


def test_pstar_edge_and_order():
    res = fisher.pstar(5, 5, "qfi")
    assert res.value == 0 and not res.detectable
    vals = [fisher.pstar(6, 2, o).value for o in (0, 1, 2, "qfi")]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
