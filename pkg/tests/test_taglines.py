import math

import numpy as np
import pytest
from scipy import integrate, stats

from fragstat import (
    all_separated,
    deterministic_binary,
    pairing_event,
    partition_at,
    residuals_at,
    simulate_taglines,
)
from fragstat.stattests import ks_test, zscore
from fragstat.streams import block_rng
from fragstat.taglines import TagGroup, TagHistory, simulate_painted, simulate_tag_batch, symmetrised_product


def _tree_history():
    # root -> (1) carrying {1,2,3}, (2) carrying {4}; (1) -> (1,1) {3}, (1,2) {1,2}; (2) -> (2,1) {4}
    nodes = [
        TagGroup(frozenset({1, 2, 3}), 0.3, 0.0),
        TagGroup(frozenset({4}), 0.5, 0.0),
        TagGroup(frozenset({3}), 1.5, 0.3),
        TagGroup(frozenset({1, 2}), 1.2, 0.3),
        TagGroup(frozenset({4}), 1.4, 0.5),
    ]
    epochs = [np.array([0.0, 0.3, 1.2]), np.array([0.0, 0.3, 1.2]), np.array([0.0, 0.3, 1.5]),
              np.array([0.0, 0.5, 1.4])]
    return TagHistory(4, 1.1, epochs, [], [], nodes)


def test_partition_two_singletons_one_pair():
    p = partition_at(_tree_history(), 1.0)
    assert p["groups"] == [frozenset({1, 2}), frozenset({3}), frozenset({4})]
    assert (p["k"], p["l"]) == (2, 1)


def test_partition_at_zero_gives_root_children():
    p = partition_at(_tree_history(), 0.0)
    assert p["groups"] == [frozenset({1, 2, 3}), frozenset({4})]
    assert (p["k"], p["l"]) == (1, 2)


def test_residuals_at_examples():
    h = TagHistory(1, 2.0, [np.array([0.0, 0.9, 1.7, 2.4])], [], [], [])
    assert abs(residuals_at(h, 1.0)[0] - 0.7) < 1e-12
    assert residuals_at(h, 0.0)[0] == 0.9
    with pytest.raises(ValueError):
        residuals_at(h, 2.5)


def test_all_separated_partition():
    nodes = [TagGroup(frozenset({i}), 2.0, 0.5) for i in (1, 2, 3)]
    h = TagHistory(3, 1.5, [np.zeros(2)] * 3, [], [frozenset({i}) for i in (1, 2, 3)], nodes)
    p = partition_at(h, 1.0)
    assert (p["k"], p["l"]) == (3, 0)
    assert all_separated(h)


def test_pairing_events():
    nodes = [TagGroup(frozenset({1, 2}), 2.0, 0.5), TagGroup(frozenset({3, 4}), 2.0, 0.5)]
    h = TagHistory(4, 1.5, [np.zeros(2)] * 4, [], [], nodes)
    assert pairing_event(h, 1.0)
    assert pairing_event(h, 1.0, [(1, 2), (3, 4)])
    assert not pairing_event(h, 1.0, [(1, 3), (2, 4)])
    h3 = TagHistory(3, 1.5, [np.zeros(2)] * 3, [], [], nodes[:1])
    with pytest.raises(ValueError):
        pairing_event(h3, 1.0)


def test_pair_event_is_togetherness(uniform_law):
    for rep in range(50):
        h = simulate_taglines(uniform_law, 2, 1.5, block_rng(3, "pair", rep))
        for t in (0.0, 0.5, 1.0, 1.5):
            together = len(partition_at(h, t)["groups"]) == 1
            assert pairing_event(h, t) == together


def test_history_consistency(uniform_law):
    T = -math.log(0.01)
    for rep in range(50):
        h = simulate_taglines(uniform_law, 4, T, block_rng(3, "hist", rep))
        res = residuals_at(h, T)
        assert np.all(res > 0) and np.all(res <= uniform_law.support_log_ratio[1])
        assert sorted(t for g in h.final_groups for t in g) == [1, 2, 3, 4]
        assert all_separated(h) == (len(h.final_groups) == 4)
        # q - 1 separations into two children each exactly when all tags end apart
        binary = sum(len(e[2]) - 1 for e in h.partition_events)
        assert binary == len(h.final_groups) - 1


def test_single_tag_increments_match_pi(uniform_law, pi):
    b = simulate_tag_batch(uniform_law, 1, 3.0, 10 ** 5, block_rng(4, "inc", 0))
    assert ks_test(b.first_increment[:, 0], pi.cdf).p_value > 0.01
    x = [simulate_taglines(uniform_law, 1, 0.1, block_rng(4, "inc-loop", i)).epochs[0][1] for i in range(2000)]
    assert ks_test(x, pi.cdf).p_value > 0.01


def test_deterministic_one_split_togetherness():
    law = deterministic_binary(0.5)
    b = simulate_tag_batch(law, 2, 0.5, 10 ** 5, block_rng(4, "det", 0))
    p = b.together.mean()
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / 10 ** 5)


def test_uniform_one_split_togetherness(uniform_law):
    # T below a: one split only, P(same child) = E[V^2 + (1 - V)^2]
    ref, _ = integrate.quad(lambda v: (v * v + (1 - v) ** 2) * 2.0, 0.25, 0.75)
    b = simulate_tag_batch(uniform_law, 2, 0.1, 10 ** 5, block_rng(4, "uni", 0))
    p = b.together.mean()
    assert abs(p - ref) < 3 * math.sqrt(ref * (1 - ref) / 10 ** 5)


def test_deterministic_not_separated_chain():
    # eps = 0.3: splits at levels 0 and log 2 before freezing, each keeps both tags w.p. 1/2
    law = deterministic_binary(0.5)
    T = -math.log(0.3)
    n = 20000
    hits = sum(not all_separated(simulate_taglines(law, 2, T, block_rng(4, "chain", i), allow_invalid=True))
               for i in range(n))
    assert abs(hits / n - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)


def test_engines_agree_with_painted_tree(uniform_law):
    eps = 0.05
    T = -math.log(eps)
    n = 20000
    batch = simulate_tag_batch(uniform_law, 2, T, n, block_rng(8, "batch", 0))
    loop_sep, loop_res = [], []
    paint_sep, paint_res = [], []
    for i in range(n):
        h = simulate_taglines(uniform_law, 2, T, block_rng(8, "loop", i))
        loop_sep.append(all_separated(h))
        loop_res.append(residuals_at(h, T)[0])
        r, final = simulate_painted(uniform_law, 2, eps, block_rng(8, "paint", i))
        paint_sep.append(len(final) == 2)
        paint_res.append(r[0])
    table = np.array([[batch.separated.sum(), n - batch.separated.sum()],
                      [sum(loop_sep), n - sum(loop_sep)],
                      [sum(paint_sep), n - sum(paint_sep)]])
    assert stats.chi2_contingency(table)[1] > 0.01
    assert stats.ks_2samp(batch.B_T[:, 0], loop_res).pvalue > 0.01
    assert stats.ks_2samp(batch.B_T[:, 0], paint_res).pvalue > 0.01


def test_exchangeability(uniform_law):
    b = simulate_tag_batch(uniform_law, 2, -math.log(1e-3), 10 ** 5, block_rng(7, "exch", 0))
    d = b.B_T[:, 0] - b.B_T[:, 1]
    assert abs(zscore(d.mean(), d.std(ddof=1) / math.sqrt(d.size))) < 3
    m12 = np.mean(b.B_T[:, 0] ** 2 * b.B_T[:, 1])
    m21 = np.mean(b.B_T[:, 1] ** 2 * b.B_T[:, 0])
    diff = b.B_T[:, 0] ** 2 * b.B_T[:, 1] - b.B_T[:, 1] ** 2 * b.B_T[:, 0]
    assert abs(zscore(m12 - m21, diff.std(ddof=1) / math.sqrt(diff.size))) < 3


def test_symmetrised_product():
    v = np.array([[1.0, 2.0]])
    out = symmetrised_product(v, [lambda x: x, lambda x: x * x])
    assert out[0] == pytest.approx((1 * 4 + 2 * 1) / 2)
