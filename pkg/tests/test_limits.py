import math
from itertools import permutations

import numpy as np
import pytest
from scipy import integrate

from fragstat import combinatorics, covariance_K, estimate_V_coupled, estimate_V_pairtag, make_function, phi_transform
from fragstat.limits import (
    check_centered,
    eta_term,
    frozen_together,
    k1,
    n_pairings,
    pairings,
    pairtag_moments,
    scaled_moment,
    v_quadrature,
    wick_prediction,
)

# V(Phi f_i, Phi f_j) for f_1 = centered x, f_2 = centered x^2 (BinaryUniform(0.25)),
# from the level-integrated representation on a fine grid
V11, V12, V22 = -0.0028592, -0.0032753, -0.0036891


def _brute_pairings(q):
    seen = set()
    for p in permutations(range(1, q + 1)):
        seen.add(frozenset(frozenset(p[i:i + 2]) for i in range(0, q, 2)))
    return seen


@pytest.fixture(scope="module")
def phis(eta):
    f1 = make_function("centered:power:1", eta)
    f2 = make_function("centered:power:2", eta)
    return f1, f2, phi_transform(f1), phi_transform(f2)


def test_combinatorics_against_enumeration():
    for q in range(1, 9):
        brute = sum(1 for i in range(1, q + 1) for _ in permutations(range(q), i))
        assert k1(q) == brute
        if q % 2 == 0:
            ref = _brute_pairings(q)
            got = pairings(q)
            assert len(got) == n_pairings(q) == len(ref)
            assert {frozenset(frozenset(p) for p in pr) for pr in got} == ref
    assert k1(1) == 1 and k1(2) == 4
    assert combinatorics(4)["n_pairings"] == 3
    with pytest.raises(ValueError):
        pairings(3)


def test_v_quadrature_values(pi, phis):
    _, _, p1, p2 = phis
    assert abs(v_quadrature(pi, p1, p1) - V11) < 1e-5
    assert abs(v_quadrature(pi, p1, p2) - V12) < 1e-5
    assert abs(v_quadrature(pi, p2, p2) - V22) < 1e-5
    assert abs(v_quadrature(pi, p1, p1, h=5e-4) - V11) < 1e-6


def test_coupled_estimator_matches_quadrature(pi, uniform_law, eta, phis):
    _, _, p1, p2 = phis
    est = estimate_V_coupled(pi, uniform_law, p1, p2, 10 ** 6, seed=1, eta=eta)
    assert abs(est.value - V12) < 3.5 * est.se
    assert est.se < 1e-4


def test_conditioned_pairtag_matches_quadrature(uniform_law, eta, phis):
    _, _, p1, _ = phis
    est = estimate_V_pairtag(uniform_law, p1, p1, 1e-3, 3 * 10 ** 5, seed=1, conditioned=True, eta=eta)
    assert abs(est.value - V11) < 3.5 * est.se


def test_crude_pairtag_matches_quadrature(uniform_law, eta, phis):
    _, _, p1, _ = phis
    est = estimate_V_pairtag(uniform_law, p1, p1, 1e-2, 10 ** 6, seed=1, eta=eta)
    assert abs(est.value - V11) < 3.5 * est.se


def test_zero_function_gives_zero(uniform_law, pi, eta):
    z = phi_transform(make_function("zero"))
    assert estimate_V_pairtag(uniform_law, z, z, 1e-2, 1000, seed=1, eta=eta).value == 0.0
    assert estimate_V_coupled(pi, uniform_law, z, z, 1000, seed=1, eta=eta).value == 0.0
    K = covariance_K(uniform_law, pi, eta, [make_function("zero")], method="coupled", M=1000)
    assert np.all(K.entries == 0.0)


def test_pairtag_swap_symmetry(uniform_law, pi, phis):
    _, _, p1, p2 = phis
    mean, se, _ = pairtag_moments(uniform_law, [(p1, p2), (p2, p1)], 1e-2, 2 * 10 ** 5, 3)
    assert abs(mean[0] - mean[1]) < 3 * math.hypot(se[0], se[1])


def test_noncentered_rejected(uniform_law, eta):
    with pytest.raises(ValueError, match="not centered"):
        check_centered([phi_transform(make_function("power:1"))], eta)
    with pytest.raises(ValueError):
        estimate_V_pairtag(uniform_law, phi_transform(make_function("power:1")),
                           phi_transform(make_function("power:1")), 1e-2, 100, seed=1, eta=eta)


def test_eta_terms_against_scipy(eta, phis):
    f1, f2, _, _ = phis
    dens = lambda y: float(eta.density(y))  # noqa: E731
    for f, g in ((f1, f1), (f1, f2), (f2, f2)):
        ref = integrate.quad(lambda y: math.exp(-y) * float(f(math.exp(-y))) * float(g(math.exp(-y))) * dens(y),
                             0, eta.b, points=[eta.pi.a])[0]
        assert abs(eta_term(f, g, eta) - ref) < 1e-10


def test_covariance_assembly(uniform_law, pi, eta, phis):
    f1, f2, _, _ = phis
    K = covariance_K(uniform_law, pi, eta, [f1, f2], method="coupled", M=4 * 10 ** 5, seed=2)
    assert np.allclose(K.eta_term, K.eta_term.T)
    assert abs(K.entries[0, 1] - K.entries[1, 0]) < 3 * math.hypot(K.se[0, 1], K.se[1, 0])
    assert abs(K.v_term[0, 0] - V11) < 3.5 * K.v_se[0, 0]
    assert np.all(np.linalg.eigvalsh(0.5 * (K.entries + K.entries.T)) > 0)
    with pytest.raises(ValueError):
        covariance_K(uniform_law, pi, eta, [make_function("power:1")])
    with pytest.raises(ValueError):
        covariance_K(uniform_law, pi, eta, [f1], method="pairtag")


def test_wick_prediction():
    v = (0.5, 0.1)
    total, se = wick_prediction([None] * 4, {k: v for k in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]})
    assert total == pytest.approx(3 * 0.25)
    # each pairing contributes V_a V_b; d/dV_k = sum of partners, V = 0.5 for each of 6 keys
    assert se == pytest.approx(math.sqrt(6 * (0.5 * 0.1) ** 2))


def test_odd_moment_and_tail(uniform_law, phis):
    _, _, p1, _ = phis
    m = scaled_moment(uniform_law, [p1, p1, p1], 1e-2, 2 * 10 ** 5, seed=4)
    assert abs(m.value) < 3 * m.se
    t = frozen_together(uniform_law, 1e-2, 10 ** 5, seed=4)
    assert t.value <= 4 * 1e-2 + 3 * t.se
