"""Small exact examples, run by ``fragstat selftest``.

Each check is deterministic or uses a fixed seed, and is phrased so that it
holds exactly or within a wide margin.
"""

from __future__ import annotations

import math

import numpy as np

from .dislocation import (
    RatioVector,
    binary_uniform,
    deterministic_binary,
    sample_ratios,
    size_biased_pick,
    validate_law,
)
from .empirical import const, gamma, gamma_infinity, gamma_odot_q, gamma_tensor_q, make_function, phi_transform, power
from .fragtree import FragmentationOutcome, outcome_stats, simulate_tree
from .limits import combinatorics, k1
from .renewal import derive_pi, residual_batch, stationary_eta
from .streams import block_rng
from .taglines import TagGroup, TagHistory, all_separated, pairing_event, partition_at, residuals_at


def _history(q, groups_at_levels, epochs=None, final=None, events=()):
    nodes = [TagGroup(frozenset(t), lv, plv) for t, lv, plv in groups_at_levels]
    ep = epochs or [np.array([0.0, 1.0]) for _ in range(q)]
    return TagHistory(q, 10.0, ep, list(events), final or [], nodes)


def trivial_checks() -> list[tuple[str, bool]]:
    out = []
    add = lambda name, ok: out.append((name, bool(ok)))  # noqa: E731
    rng = block_rng(0, "selftest", 0)

    det = deterministic_binary(0.5)
    uni = binary_uniform(0.25)
    r = sample_ratios(det, rng)
    add("deterministic ratios are (0.5, 0.5)", tuple(r) == (0.5, 0.5))
    rs = uni.sample_batch(rng, 10 ** 4)
    add("uniform ratios in [0.25, 0.75] summing to 1",
        rs.min() >= 0.25 and rs.max() <= 0.75 and np.all(np.abs(rs.sum(axis=1) - 1.0) <= 1e-12))

    add("BinaryUniform(0.25) passes all assumptions", validate_law(uni).ok)
    add("DeterministicBinary(0.3) fails assumption 4", not validate_law(deterministic_binary(0.3)).assumption4)
    add("BinaryUniform(0) fails assumption 3", not validate_law(binary_uniform(0.0)).assumption3)

    add("pick (0.5,0.5), u=0.25", size_biased_pick(RatioVector((0.5, 0.5)), 0.25) == (1, math.log(2.0)))
    i, x = size_biased_pick(RatioVector((0.6, 0.4)), 0.7)
    add("pick (0.6,0.4), u=0.7", i == 2 and x == -math.log(0.4))

    o = simulate_tree(det, 0.3, rng, allow_invalid=True)
    add("DeterministicBinary(0.5), eps=0.3 gives four fragments of 0.25",
        len(o) == 4 and np.all(o.sizes == 0.25))
    st = outcome_stats(FragmentationOutcome(0.5, np.array([0.3, 0.3, 0.4]), np.ones(3), 2))
    add("outcome stats of {0.3,0.3,0.4}",
        st["count"] == 3 and abs(st["total_mass"] - 1.0) < 1e-15 and st["min_size"] == 0.3
        and st["max_size"] == 0.4)
    o = simulate_tree(uni, 1e-3, rng)
    add("conservation", abs(math.fsum(o.sizes.tolist()) - 1.0) <= 1e-12)

    h = _history(1, [({1}, 1.7, 0.9), ({1}, 0.9, 0.0)], epochs=[np.array([0.0, 0.9, 1.7])])
    add("residual with epochs {0,0.9,1.7} at t=1", abs(residuals_at(h, 1.0)[0] - 0.7) < 1e-12)
    add("residual at t=0 is the first epoch", residuals_at(h, 0.0)[0] == 0.9)
    h4 = _history(4, [({1, 2}, 2.0, 0.5), ({3}, 1.5, 0.5), ({4}, 1.2, 0.5)])
    p = partition_at(h4, 1.0)
    add("partition with groups {1,2},{3},{4}", p["k"] == 2 and p["l"] == 1)
    hs = _history(3, [({1}, 2.0, 0.5), ({2}, 2.0, 0.5), ({3}, 2.0, 0.5)])
    p = partition_at(hs, 1.0)
    add("all separated gives k=q, l=0", p["k"] == 3 and p["l"] == 0)
    hp = _history(4, [({1, 2}, 2.0, 0.5), ({3, 4}, 2.0, 0.5)])
    add("pairing {{1,2},{3,4}} detected", pairing_event(hp, 1.0)
        and pairing_event(hp, 1.0, [(1, 2), (3, 4)]) and not pairing_event(hp, 1.0, [(1, 3), (2, 4)]))
    add("q=4 has three pairings", combinatorics(4)["n_pairings"] == 3)
    add("one tag is always separated", all_separated(TagHistory(1, 1.0, [np.zeros(2)], [], [frozenset({1})])))
    add("K1(1)=1 and K1(2)=4", k1(1) == 1 and k1(2) == 4)

    pi_det = derive_pi(det, allow_invalid=True)
    add("DeterministicBinary(0.5) waiting law is a unit atom at log 2",
        pi_det.discrete and len(pi_det.atoms) == 1 and abs(pi_det.atoms[0][0] - math.log(2)) < 1e-15)
    res = residual_batch(pi_det, 1.0, 4, rng)
    add("lattice residual at t=1", np.all(np.abs(res - (2 * math.log(2) - 1)) < 1e-12))
    pi = derive_pi(uni)
    add("support of BinaryUniform(0.25)",
        abs(pi.a + math.log(0.75)) < 1e-15 and abs(pi.b + math.log(0.25)) < 1e-15)
    eta = stationary_eta(pi)
    add("eta density at 0 is 1/mu", abs(float(eta.density(0.0)) - 1.0 / pi.mu) < 1e-12)
    add("eta has unit mass", abs(eta.expect(lambda y: 1.0) - 1.0) < 1e-9)

    add("Phi(1) = 1", float(phi_transform(const())(0.7)) == 1.0)
    add("Phi(x) = exp(-y)", abs(float(phi_transform(power(1))(0.7)) - math.exp(-0.7)) < 1e-15)
    add("Phi(x^2)(log 2) = 0.25", abs(float(phi_transform(power(2))(math.log(2))) - 0.25) < 1e-15)
    add("gamma(1) = 1 on a tree", abs(gamma(o, const()) - 1.0) <= 1e-12)
    add("gamma(x) on {0.3,0.3,0.4}, eps=0.5", abs(gamma((np.array([0.3, 0.3, 0.4]), 0.5), power(1)) - 0.68) < 1e-12)
    two = (np.array([0.5, 0.5]), 0.6)
    add("injective and tensor sums on {0.5,0.5}",
        abs(gamma_odot_q(two, [const(), const()]) - 0.5) < 1e-15
        and abs(gamma_tensor_q(two, [const(), const()]) - 1.0) < 1e-15)
    add("gamma_inf(1) = 1", abs(gamma_infinity(const(), eta) - 1.0) < 1e-9)
    add("centered function has zero limit", abs(gamma_infinity(make_function("centered:power:1", eta), eta)) < 1e-9)
    return out
