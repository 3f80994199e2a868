import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.integrate import trapezoid

from fragstat import (
    RatioVector,
    binary_density,
    binary_uniform,
    derive_pi,
    deterministic_binary,
    law_from_config,
    sample_ratios,
    size_biased_pick,
    validate_law,
)
from fragstat.dislocation import require_valid
from fragstat.stattests import ks_test


def test_deterministic_ratios(rng):
    law = deterministic_binary(0.5)
    for _ in range(5):
        assert tuple(sample_ratios(law, rng)) == (0.5, 0.5)


def test_uniform_ratios_support_and_sum(uniform_law, rng):
    r = uniform_law.sample_batch(rng, 10 ** 6)
    assert r.min() >= 0.25 and r.max() <= 0.75
    assert np.all(r[:, 0] >= r[:, 1])
    assert np.max(np.abs(r.sum(axis=1) - 1.0)) <= 1e-12


def test_mean_max_ratio_against_quadrature(uniform_law, rng):
    ref, _ = integrate.quad(lambda v: max(v, 1 - v) * 2.0, 0.25, 0.75, points=[0.5])
    r = uniform_law.sample_batch(rng, 10 ** 5)[:, 0]
    se = r.std(ddof=1) / math.sqrt(r.size)
    assert abs(r.mean() - ref) < 3 * se


def test_validation_reports():
    assert validate_law(binary_uniform(0.25)).ok
    rep = validate_law(deterministic_binary(0.3))
    assert not rep.assumption4 and "assumption4" in rep.failed
    rep = validate_law(binary_uniform(0.0))
    assert not rep.assumption3
    with pytest.raises(ValueError, match="assumption3"):
        require_valid(binary_uniform(0.0))
    assert not require_valid(deterministic_binary(0.3), allow_invalid=True).ok


def test_density_with_gap_fails_support_check():
    table = [(0.2, 1.0), (0.3, 0.0), (0.4, 0.0), (0.45, 0.0), (0.55, 0.0), (0.6, 0.0), (0.7, 0.0), (0.8, 1.0)]
    assert not validate_law(binary_density(0.2, table)).assumption3


def test_bad_parameters():
    with pytest.raises(ValueError):
        binary_uniform(0.5)
    with pytest.raises(ValueError):
        law_from_config({"family": "nope"})
    with pytest.raises(ValueError):
        binary_density(0.2, [(0.1, 1.0), (0.8, 1.0)])
    with pytest.raises(ValueError):
        RatioVector((0.4, 0.6))


def test_config_round_trip():
    for law in (binary_uniform(0.1), deterministic_binary(0.3),
                binary_density(0.25, [(0.25, 1.0), (0.5, 3.0), (0.75, 1.0)])):
        assert law_from_config(law.to_config()) == law


def test_size_biased_pick_examples():
    assert size_biased_pick(RatioVector((0.5, 0.5)), 0.25) == (1, math.log(2.0))
    assert size_biased_pick(RatioVector((0.6, 0.4)), 0.7) == (2, -math.log(0.4))
    with pytest.raises(ValueError):
        size_biased_pick(RatioVector((0.6, 0.4)), 1.0)


def test_size_biased_pick_frequency(rng):
    r = RatioVector((0.6, 0.4))
    n = 10 ** 6
    hits = sum(size_biased_pick(r, u)[0] == 1 for u in rng.random(n).tolist())
    se = math.sqrt(0.6 * 0.4 / n)
    assert abs(hits / n - 0.6) < 3 * se


def test_size_biased_pick_internal_error():
    class Leaky(tuple):
        pass

    with pytest.raises(RuntimeError):
        size_biased_pick(Leaky((0.3, 0.3)), 0.9)


def test_waiting_law_of_uniform_split_matches_density(uniform_law, rng):
    # -log of the size-biased ratio against 2 e^{-2x} / (1 - 2c), derived independently
    c = 0.25
    r = uniform_law.sample_batch(rng, 10 ** 5)
    u = rng.random(r.shape[0])
    x = -np.log(np.where(u < r[:, 0], r[:, 0], r[:, 1]))
    a, b = -math.log(1 - c), -math.log(c)
    cdf = lambda t: np.clip((math.exp(-2 * a) - np.exp(-2 * np.clip(t, a, b))) / (1 - 2 * c), 0, 1)  # noqa: E731
    assert ks_test(x, cdf).p_value > 0.01
    pi = derive_pi(uniform_law)
    grid = np.linspace(a + 1e-9, b - 1e-9, 50)
    assert np.allclose(pi.density(grid), 2 * np.exp(-2 * grid) / (1 - 2 * c), rtol=1e-12)


def test_table_density_waiting_law_sampler(rng):
    law = binary_density(0.2, [(0.2, 0.5), (0.5, 2.5), (0.8, 0.5)])
    pi = derive_pi(law)
    r = law.sample_batch(rng, 10 ** 5)
    u = rng.random(r.shape[0])
    x = -np.log(np.where(u < r[:, 0], r[:, 0], r[:, 1]))
    assert ks_test(x, pi.cdf).p_value > 0.01
    assert stats.kstest(law.sample_split_points(rng, 10 ** 4), lambda v: law.split_density.cdf(v)).pvalue > 0.01


def test_table_density_is_positive_at_support_edges():
    law = binary_density(0.2, [(0.2, 0.5), (0.5, 2.5), (0.8, 0.5)])
    d = law.split_density
    assert float(d.pdf(1.0 - 0.8)) > 0 and float(d.pdf(0.8)) > 0
    pi = derive_pi(law)
    grid = np.linspace(pi.a, pi.b, 20001)
    assert abs(trapezoid(pi.density(grid), grid) - 1.0) < 1e-3
