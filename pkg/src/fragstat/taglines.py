"""Joint simulation of q tagged fragments.

Only the part of the genealogical tree that carries tags is simulated. A
group of tags sitting on one fragment at ``level = -log(size)`` splits with a
fresh ratio vector; each tag independently follows child ``i`` with
probability ``s_i``. Tags choosing the same child stay grouped. A group
freezes once its level exceeds ``T = -log(epsilon)``.

Node levels are renewal epochs of every tag carried. A node belongs to the
straddling set at ``t`` when its parent's level is at most ``t`` and its own
level exceeds ``t``. With this convention the residual of tag ``i`` at ``t``
is the level of its straddling node minus ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from .dislocation import DislocationLaw, require_valid, size_biased_pick


@dataclass(frozen=True)
class TagGroup:
    tags: frozenset
    level: float
    parent_level: float


@dataclass
class TagHistory:
    """Joint trajectory of ``q`` tags up to freezing.

    Attributes
    ----------
    q, T : int, float
    epochs : list of ndarray
        Per tag, renewal epochs ``0 = S_0 < S_1 < ...`` up to and including
        the first epoch above ``T``.
    partition_events : list of tuple
        ``(level, parent tags, child tag-sets)`` for each split that separated
        tags, in order of level.
    final_groups : list of frozenset
        Partition of the tags into frozen fragments.
    nodes : list of TagGroup
        Every tag-carrying fragment below the root, with its parent's level.
    """

    q: int
    T: float
    epochs: list
    partition_events: list
    final_groups: list
    nodes: list = field(default_factory=list)

    def tag_labels(self) -> list[int]:
        return list(range(1, self.q + 1))


def simulate_taglines(law: DislocationLaw, q: int, T: float, rng: np.random.Generator,
                      allow_invalid: bool = False) -> TagHistory:
    """Event-loop simulation of ``q`` tags (labelled ``1..q``)."""
    if q < 1:
        raise ValueError("q must be at least 1")
    if not T > 0:
        raise ValueError("T must be positive")
    require_valid(law, allow_invalid)
    epochs = {i: [0.0] for i in range(1, q + 1)}
    events = []
    nodes = []
    final = []
    # heap is unnecessary: groups are independent, so processing order only
    # matters for the recorded event order, which is sorted at the end
    pending = [(0.0, frozenset(range(1, q + 1)))]
    while pending:
        level, tags = pending.pop()
        r = law.sample_batch(rng, 1)[0]
        children: dict[int, list[int]] = {}
        incr: dict[int, float] = {}
        for tag in sorted(tags):
            i, x = size_biased_pick(r, float(rng.random()))
            children.setdefault(i, []).append(tag)
            incr[i] = x
        child_sets = [frozenset(children[i]) for i in sorted(children)]
        if len(child_sets) > 1:
            events.append((level, tags, child_sets))
        for i in sorted(children):
            group = frozenset(children[i])
            new_level = level + incr[i]
            nodes.append(TagGroup(group, new_level, level))
            for tag in group:
                epochs[tag].append(new_level)
            if new_level > T:
                final.append(group)
            else:
                pending.append((new_level, group))
    events.sort(key=lambda e: (e[0], min(e[1])))
    final.sort(key=min)
    nodes.sort(key=lambda n: (n.level, min(n.tags)))
    return TagHistory(q, float(T), [np.array(epochs[i]) for i in range(1, q + 1)],
                      events, final, nodes)


def _check_t(history: TagHistory, t: float):
    if t < 0 or t > history.T:
        raise ValueError(f"t must lie in [0, T={history.T}], got {t}")


def residuals_at(history: TagHistory, t: float) -> np.ndarray:
    """``B_t`` for every tag: first epoch above ``t``, minus ``t``."""
    _check_t(history, t)
    out = np.empty(history.q)
    for i, ep in enumerate(history.epochs):
        out[i] = ep[np.searchsorted(ep, t, side="right")] - t
    return out


def partition_at(history: TagHistory, t: float) -> dict:
    """Partition of the tags by straddling fragment at ``t``.

    Returns
    -------
    dict
        ``groups`` (list of frozensets, sorted by smallest tag), ``k`` (number
        of singleton groups) and ``l`` (``q`` minus the number of groups).
    """
    _check_t(history, t)
    groups = [n.tags for n in history.nodes if n.parent_level <= t < n.level]
    groups.sort(key=min)
    k = sum(1 for g in groups if len(g) == 1)
    return {"groups": groups, "k": k, "l": history.q - len(groups)}


def all_separated(history: TagHistory) -> bool:
    """True when every tag froze on its own fragment."""
    return all(len(g) == 1 for g in history.final_groups)


def _as_partition(pairing: Iterable[Iterable[int]]) -> set:
    return {frozenset(p) for p in pairing}


def pairing_event(history: TagHistory, t: float,
                  pairing: Sequence[Sequence[int]] | None = None) -> bool:
    """Whether the straddling partition at ``t`` is a perfect pairing.

    With ``pairing`` given, the partition must equal it exactly; without, any
    partition into pairs qualifies (``q`` must then be even).
    """
    if pairing is None and history.q % 2:
        raise ValueError("pairing events without an explicit pairing need an even q")
    groups = partition_at(history, t)["groups"]
    if pairing is None:
        return all(len(g) == 2 for g in groups)
    target = _as_partition(pairing)
    if any(len(p) != 2 for p in target):
        raise ValueError("a pairing must consist of two-element blocks")
    return set(groups) == target


# ---------------------------------------------------------------------------
# vectorised engine
# ---------------------------------------------------------------------------


@dataclass
class TagBatch:
    """Many independent tag systems simulated together.

    Attributes
    ----------
    B_T : ndarray (M, q)
        Residual of each tag at ``T``.
    rep : ndarray (M, q)
        Final group label of each tag: the smallest tag index (0-based)
        sharing its frozen fragment.
    n_epochs : ndarray (M, q)
        Number of positive epochs up to the first one above ``T``.
    first_increment : ndarray (M, q)
        ``S_1`` per tag.
    """

    T: float
    B_T: np.ndarray
    rep: np.ndarray
    n_epochs: np.ndarray
    first_increment: np.ndarray

    @property
    def separated(self) -> np.ndarray:
        q = self.rep.shape[1]
        return np.all(self.rep == np.arange(q), axis=1)

    @property
    def together(self) -> np.ndarray:
        """For ``q = 2``: both tags frozen on the same fragment."""
        return self.rep[:, 1] == self.rep[:, 0]


def simulate_tag_batch(law: DislocationLaw, q: int, T: float, M: int,
                       rng: np.random.Generator) -> TagBatch:
    """Simulate ``M`` independent systems of ``q`` tags at once.

    Each step splits every unfrozen group once. Ratios are drawn per
    (system, tag) and read through the group label, so each group uses a
    single ratio vector, and every tag draws its own uniform for the child
    choice.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    level = np.zeros((M, q))
    rep = np.zeros((M, q), dtype=np.int64)
    nep = np.zeros((M, q), dtype=np.int64)
    first = np.zeros((M, q))
    cols = np.arange(q)
    rows = np.arange(M)
    started = False
    while rows.size:
        m = rows.size
        lv = level[rows]
        rp = rep[rows]
        live = lv <= T
        r = law.sample_batch(rng, m * q).reshape(m, q, 2)
        u = rng.random((m, q))
        ridx = np.arange(m)[:, None]
        s1 = r[ridx, rp, 0]
        s2 = r[ridx, rp, 1]
        child = (u >= s1).astype(np.int64)
        x = -np.log(np.where(child == 0, s1, s2))
        new_lv = np.where(live, lv + x, lv)
        # new label: smallest tag index with the same old label and the same child
        key = np.where(live, rp * 2 + child, -1 - rp)
        new_rp = np.broadcast_to(cols, (m, q)).copy()
        for j in range(q - 1, -1, -1):
            hit = key == key[:, j:j + 1]
            new_rp = np.where(hit, j, new_rp)
        new_rp = np.where(live, new_rp, rp)
        level[rows] = new_lv
        rep[rows] = new_rp
        nep[rows] += live
        if not started:
            first[:] = x
            started = True
        rows = rows[np.any(new_lv <= T, axis=1)]
    return TagBatch(float(T), level - T, rep, nep, first)


# ---------------------------------------------------------------------------
# painted tags on the full tree (second construction, used as a cross-check)
# ---------------------------------------------------------------------------


def simulate_painted(law: DislocationLaw, q: int, epsilon: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, list]:
    """Tags as uniform points painted on ``[0, 1]``, followed through the full tree.

    Each fragment is an interval of ``[0, 1]``; splitting cuts it into
    consecutive sub-intervals of lengths proportional to the ratios. A tag
    belongs to the fragment whose interval contains its point.

    Returns
    -------
    (ndarray, list of frozenset)
        Residuals ``-log(size) - T`` of the tags' frozen fragments and the
        final partition of tags (labelled ``1..q``).
    """
    T = -math.log(epsilon)
    y = rng.random(q)
    resid = np.empty(q)
    final = []
    stack = [(0.0, 1.0, 0.0, tuple(range(q)))]
    while stack:
        left, size, level, tags = stack.pop()
        # only the branches carrying tags matter for the tags' fate
        r = law.sample_batch(rng, 1)[0]
        off = left
        rest = tags
        for k, s in enumerate(r):
            width = size * float(s)
            if k == len(r) - 1:
                inside = rest  # closes the interval despite rounding in the offsets
            else:
                inside = tuple(t for t in rest if y[t] < off + width)
            rest = tuple(t for t in rest if t not in inside)
            lv = level - math.log(float(s))
            if inside:
                if lv > T:
                    for t in inside:
                        resid[t] = lv - T
                    final.append(frozenset(t + 1 for t in inside))
                else:
                    stack.append((off, width, lv, inside))
            off += width
    final.sort(key=min)
    return resid, final


def symmetrised_product(values: np.ndarray, functions: Sequence) -> np.ndarray:
    """Average of ``prod_i f_{sigma(i)}(values[:, i])`` over permutations ``sigma``."""
    q = values.shape[1]
    if len(functions) != q:
        raise ValueError("need one function per tag")
    evals = np.stack([[f(values[:, i]) for i in range(q)] for f in functions])  # (fn, tag, M)
    acc = np.zeros(values.shape[0])
    perms = list(permutations(range(q)))
    for sigma in perms:
        prod = np.ones(values.shape[0])
        for i, k in enumerate(sigma):
            prod = prod * evals[k, i]
        acc += prod
    return acc / len(perms)
