import math

import numpy as np
import pytest
from scipy import integrate

from fragstat import binary_density, derive_pi, deterministic_binary, make_function, phi_transform, stationary_eta
from fragstat.renewal import (
    RateRow,
    eta_double_integral,
    log_gap_slope,
    overshoot_reward,
    rate_experiment,
    renewal_function,
    residual_batch,
    residuals,
    simulate_residual,
)
from fragstat.stattests import ks_test, mean_se

# values for BinaryUniform(0.25), checked against scipy quadrature below
MU = 0.6503555363682672
A = -math.log(0.75)
B = -math.log(0.25)


def _pi_density(x, c=0.25):
    return 2 * math.exp(-2 * x) / (1 - 2 * c) if A <= x <= B else 0.0


def test_support_and_mean(pi):
    assert abs(pi.a - A) < 1e-15 and abs(pi.b - B) < 1e-15
    ref, _ = integrate.quad(lambda x: x * _pi_density(x), A, B)
    assert abs(pi.mu - ref) < 1e-12
    assert abs(pi.mu - MU) < 1e-14


def test_pi_cdf_against_quadrature(pi):
    for x in (0.3, 0.5, 0.9, 1.2):
        ref, _ = integrate.quad(_pi_density, A, x)
        assert abs(float(pi.cdf(x)) - ref) < 1e-12


def test_eta_cdf_against_quadrature(pi, eta):
    def surv(y):
        return 1.0 - integrate.quad(_pi_density, A, max(y, A))[0] if y > A else 1.0

    for x in (0.1, A, 0.5, 1.0, B):
        ref, _ = integrate.quad(lambda y: surv(y) / MU, 0, x, points=[A] if x > A else None)
        assert abs(float(eta.cdf(x)) - ref) < 1e-10
    assert abs(float(eta.density(0.0)) - 1 / MU) < 1e-12


def test_eta_mean_double_integral(pi, eta):
    direct = eta.expect(lambda y: y)
    nested = eta_double_integral(pi, lambda y: y)
    assert abs(direct - nested) < 1e-8
    # stationary residual mean E[Y^2] / (2 mu)
    m2, _ = integrate.quad(lambda x: x * x * _pi_density(x), A, B)
    assert abs(direct - m2 / (2 * MU)) < 1e-10


def test_table_law_matches_uniform_law(pi, eta):
    # a flat table is the uniform family
    flat = derive_pi(binary_density(0.25, [(0.25, 1.0), (0.5, 1.0), (0.75, 1.0)]))
    for x in np.linspace(0.2, 1.5, 14):
        assert abs(float(flat.cdf(x)) - float(pi.cdf(x))) < 1e-12
    assert abs(flat.mu - MU) < 1e-10
    eta_t = stationary_eta(flat)
    for x in (0.2, 0.6, 1.1):
        assert abs(float(eta_t.cdf(x)) - float(eta.cdf(x))) < 1e-7


def test_eta_sampler(eta, rng):
    assert ks_test(eta.sample(rng, 10 ** 5), eta.cdf).p_value > 0.01


def test_residual_at_zero_is_waiting_time(pi, rng):
    x = residual_batch(pi, 0.0, 10 ** 4, rng)
    assert ks_test(x, pi.cdf).p_value > 0.01
    assert simulate_residual(pi, 0.0, rng) >= pi.a


def test_residual_large_t_matches_eta(pi, eta):
    x = residuals(pi, 50 * pi.b, 10 ** 5, seed=3)
    assert x.min() > 0 and x.max() <= pi.b
    assert ks_test(x, eta.cdf).p_value > 0.01


def test_lattice_residual():
    pi = derive_pi(deterministic_binary(0.5), allow_invalid=True)
    assert abs(simulate_residual(pi, 1.0, np.random.default_rng(0)) - (2 * math.log(2) - 1)) < 1e-12


def test_overshoot_reward_constant(pi):
    g = overshoot_reward(pi, lambda y: np.ones_like(y), [0.0, 0.5, 2.0])
    assert abs(g[0] - 1.0) < 1e-10
    assert abs(g[1] - (1 - float(pi.cdf(0.5)))) < 1e-10
    assert g[2] == 0.0


def test_renewal_function_converges_to_eta(pi, eta):
    f = phi_transform(make_function("centered:power:1", eta))
    H = renewal_function(pi, f, 12.0)
    assert abs(H.values[-1]) < 1e-6
    H_fine = renewal_function(pi, f, 4.0, h=5e-4)
    for t in (0.0, 1.0, 2.0):
        assert abs(float(H(t)) - float(H_fine(t))) < 2e-6
    assert float(H(-0.3)) == pytest.approx(float(f(0.3)))
    with pytest.raises(ValueError):
        renewal_function(pi, f, 1.0, h=0.5)


def test_renewal_function_against_simulation(pi, eta, rng):
    f = phi_transform(make_function("power:1"))
    H = renewal_function(pi, f, 2.0)
    for t in (0.5, 1.0):
        m, se = mean_se(f(residual_batch(pi, t, 4 * 10 ** 5, rng)))
        assert abs(m - float(H(t))) < 3.5 * se


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rate_constant_has_zero_gap(pi):
    one = phi_transform(make_function("const"))
    for est in ("crude", "renewal_reward"):
        rows = rate_experiment(pi, one, [2.0, 4.0], 1000, seed=1, eta_f=1.0, estimator=est)
        for r in rows:
            assert r.gap <= 3 * r.se + 1e-12


def test_rate_estimators_agree(pi, eta):
    f = phi_transform(make_function("centered:power:1", eta))
    a = rate_experiment(pi, f, [1.0], 2 * 10 ** 5, seed=2, eta_f=0.0, estimator="crude")[0]
    b = rate_experiment(pi, f, [1.0], 2 * 10 ** 5, seed=2, eta_f=0.0, estimator="renewal_reward")[0]
    H = renewal_function(pi, f, 2.0)
    assert abs(a.estimate - float(H(1.0))) < 3.5 * a.se
    assert abs(b.estimate - float(H(1.0))) < 3.5 * b.se
    assert b.se < a.se


def test_rate_warns_on_noise(pi, eta):
    f = phi_transform(make_function("centered:power:1", eta))
    with pytest.warns(RuntimeWarning):
        rate_experiment(pi, f, [8.0], 200, seed=1, eta_f=0.0)


def test_log_gap_slope_rules():
    rows = [RateRow(2, 0, 1e-2, 1e-5), RateRow(4, 0, 1e-4, 1e-5), RateRow(6, 0, 1e-6, 1e-5)]
    s = log_gap_slope(rows)
    assert s["kind"] == "least_squares" and s["n_pre_noise"] == 2
    assert abs(s["slope"] - math.log(1e-2) / 2) < 1e-12
    rows = [RateRow(2, 0, 3e-4, 1e-5), RateRow(4, 0, 1e-7, 1e-5)]
    s = log_gap_slope(rows)
    assert s["kind"] == "upper_bound"
    assert abs(s["slope"] - (math.log(3e-5) - math.log(3e-4)) / 2) < 1e-12
    assert log_gap_slope([RateRow(2, 0, 1e-7, 1e-5)])["slope"] is None
