import math

import numpy as np
import pytest

from fragstat import binary_uniform, deterministic_binary, outcome_stats, simulate_tree
from fragstat.fragtree import FragmentationOutcome, simulate_forest
from fragstat.stattests import zscore
from fragstat.streams import block_rng


def _recursive_count(size, eps, c, rng):
    # independent plain recursion: split uniformly on [c, 1 - c], count frozen children
    v = c + (1 - 2 * c) * rng.random()
    n = 0
    for child in (size * v, size * (1 - v)):
        n += 1 if child < eps else _recursive_count(child, eps, c, rng)
    return n


def test_deterministic_tree():
    o = simulate_tree(deterministic_binary(0.5), 0.3, np.random.default_rng(0), store_paths=True,
                      allow_invalid=True)
    assert len(o) == 4 and np.all(o.sizes == 0.25)
    assert sorted(o.paths) == [(1, 1), (1, 2), (2, 1), (2, 2)]
    st = outcome_stats(o)
    assert st["count"] == 4 and st["min_size"] == st["max_size"] == 0.25
    for fr in o.fragments:
        assert fr.size < 0.3 <= fr.parent_size


def test_outcome_stats_example():
    st = outcome_stats(FragmentationOutcome(0.5, np.array([0.3, 0.3, 0.4]), np.ones(3), 2))
    assert st == {"count": 3, "total_mass": 1.0, "min_size": 0.3, "max_size": 0.4}
    with pytest.raises(ValueError):
        outcome_stats(FragmentationOutcome(0.5, np.array([]), np.array([]), 0))


def test_epsilon_range(uniform_law, rng):
    for eps in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            simulate_tree(uniform_law, eps, rng)


def test_invalid_law_refused(rng):
    with pytest.raises(ValueError):
        simulate_tree(deterministic_binary(0.5), 0.3, rng)


def test_paths_reproduce_sizes(rng):
    law = binary_uniform(0.25)
    o = simulate_tree(law, 0.05, rng, store_paths=True)
    assert len(o.paths) == len(o)
    assert len(set(o.paths)) == len(o)
    assert all(p for p in o.paths)


def test_mean_count_against_recursive_oracle(uniform_law):
    eps, n = 0.01, 1000
    rng_o = block_rng(1, "oracle", 0)
    oracle = np.array([_recursive_count(1.0, eps, 0.25, rng_o) for _ in range(n)])
    dfs = np.array([len(simulate_tree(uniform_law, eps, block_rng(1, "dfs", i))) for i in range(n)])
    forest = simulate_forest(uniform_law, eps, n, block_rng(1, "forest", 0))
    fc = np.diff(forest.offsets)
    se = lambda x: x.std(ddof=1) / math.sqrt(x.size)  # noqa: E731
    assert abs(zscore(dfs.mean() - oracle.mean(), se(dfs), se(oracle))) < 3
    assert abs(zscore(fc.mean() - oracle.mean(), se(fc), se(oracle))) < 3


def test_forest_conservation_and_window(uniform_law):
    eps = 1e-3
    forest = simulate_forest(uniform_law, eps, 500, block_rng(2, "forest", 0))
    mass = forest.segment_fsum(forest.sizes)
    assert np.max(np.abs(mass - 1.0)) <= 1e-12
    assert forest.sizes.min() >= 0.25 * eps and forest.sizes.max() < eps
    assert np.diff(forest.offsets).max() <= math.ceil(1 / (eps * 0.25))
    o = forest.outcome(3)
    assert len(o) == forest.offsets[4] - forest.offsets[3]


def test_determinism(uniform_law):
    a = simulate_tree(uniform_law, 1e-3, block_rng(5, "t", 0))
    b = simulate_tree(uniform_law, 1e-3, block_rng(5, "t", 0))
    assert a.sizes.tobytes() == b.sizes.tobytes()
    fa = simulate_forest(uniform_law, 1e-3, 64, block_rng(5, "f", 0))
    fb = simulate_forest(uniform_law, 1e-3, 64, block_rng(5, "f", 0))
    assert fa.sizes.tobytes() == fb.sizes.tobytes()
