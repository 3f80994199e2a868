"""Fragmentation trees frozen below a size threshold.

A fragment of size at least ``epsilon`` splits according to the dislocation
law. A child smaller than ``epsilon`` is frozen and observed. Since every
ratio is at least ``c``, each frozen size lies in ``[c epsilon, epsilon)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dislocation import DislocationLaw, require_valid


@dataclass(frozen=True)
class FrozenFragment:
    size: float
    parent_size: float
    path: tuple | None = None


@dataclass
class FragmentationOutcome:
    """The frozen population of one tree.

    Attributes
    ----------
    epsilon : float
        Freezing threshold.
    sizes : ndarray
        Frozen sizes in traversal order.
    parent_sizes : ndarray
        Size of each frozen fragment's parent.
    paths : list of tuple, optional
        Child-index paths (1-based), only when requested.
    node_count : int
        Number of split (unfrozen) nodes, the root included.
    """

    epsilon: float
    sizes: np.ndarray
    parent_sizes: np.ndarray
    node_count: int
    paths: list | None = None

    @property
    def T(self) -> float:
        return -math.log(self.epsilon)

    @property
    def fragments(self) -> list[FrozenFragment]:
        paths = self.paths if self.paths is not None else [None] * len(self.sizes)
        return [FrozenFragment(float(s), float(p), q)
                for s, p, q in zip(self.sizes, self.parent_sizes, paths)]

    def __len__(self):
        return int(self.sizes.size)


def _check_eps(epsilon):
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")


def simulate_tree(law: DislocationLaw, epsilon: float, rng: np.random.Generator,
                  store_paths: bool = False, allow_invalid: bool = False) -> FragmentationOutcome:
    """Simulate one tree depth first with an explicit stack.

    Only the current root-to-leaf frontier is kept in memory, plus the
    frozen output.
    """
    _check_eps(epsilon)
    require_valid(law, allow_invalid)
    sizes: list[float] = []
    parents: list[float] = []
    paths: list[tuple] | None = [] if store_paths else None
    stack = [(1.0, ())]
    nodes = 0
    while stack:
        size, path = stack.pop()
        nodes += 1
        r = law.sample_batch(rng, 1)[0]
        # push in reverse so that child 1 is expanded first
        for i in (1, 0):
            child = size * float(r[i])
            cpath = path + (i + 1,) if store_paths else ()
            if child < epsilon:
                continue
            stack.append((child, cpath))
        for i in (0, 1):
            child = size * float(r[i])
            if child < epsilon:
                sizes.append(child)
                parents.append(size)
                if paths is not None:
                    paths.append(path + (i + 1,))
    return FragmentationOutcome(float(epsilon), np.asarray(sizes), np.asarray(parents), nodes, paths)


def outcome_stats(outcome: FragmentationOutcome) -> dict:
    """Count, total mass (exactly rounded sum), smallest and largest size."""
    if len(outcome) == 0:
        raise ValueError("empty fragment population")
    s = outcome.sizes
    return {
        "count": int(s.size),
        "total_mass": math.fsum(s.tolist()),
        "min_size": float(s.min()),
        "max_size": float(s.max()),
    }


@dataclass
class Forest:
    """Frozen populations of several independent trees, stored flat.

    Tree ``i`` owns ``sizes[offsets[i]:offsets[i + 1]]``.
    """

    epsilon: float
    sizes: np.ndarray
    offsets: np.ndarray
    node_count: np.ndarray

    @property
    def n_trees(self) -> int:
        return int(self.offsets.size - 1)

    def tree(self, i: int) -> np.ndarray:
        return self.sizes[self.offsets[i]:self.offsets[i + 1]]

    def outcome(self, i: int) -> FragmentationOutcome:
        s = self.tree(i)
        return FragmentationOutcome(self.epsilon, s.copy(), np.full(s.size, np.nan),
                                    int(self.node_count[i]))

    def segment_fsum(self, values: np.ndarray) -> np.ndarray:
        """Per-tree exactly rounded sums of ``values`` (aligned with ``sizes``)."""
        out = np.empty(self.n_trees)
        for i in range(self.n_trees):
            out[i] = math.fsum(values[self.offsets[i]:self.offsets[i + 1]].tolist())
        return out


def simulate_forest(law: DislocationLaw, epsilon: float, n_trees: int,
                    rng: np.random.Generator) -> Forest:
    """Simulate ``n_trees`` independent trees together, one generation at a time.

    All unfrozen fragments of a generation split in a single vectorised
    step. This is the engine behind the large replicated experiments; it
    draws its random numbers in a different order from :func:`simulate_tree`
    and agrees with it in law only.
    """
    _check_eps(epsilon)
    tree = np.arange(n_trees)
    size = np.ones(n_trees)
    frozen_tree = []
    frozen_size = []
    nodes = np.zeros(n_trees, dtype=np.int64)
    while tree.size:
        nodes += np.bincount(tree, minlength=n_trees)
        r = law.sample_batch(rng, tree.size)
        kids = size[:, None] * r
        kid_tree = np.repeat(tree, 2)
        kids = kids.ravel()
        cold = kids < epsilon
        frozen_tree.append(kid_tree[cold])
        frozen_size.append(kids[cold])
        tree = kid_tree[~cold]
        size = kids[~cold]
    ft = np.concatenate(frozen_tree)
    fs = np.concatenate(frozen_size)
    order = np.argsort(ft, kind="stable")
    counts = np.bincount(ft, minlength=n_trees)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return Forest(float(epsilon), fs[order], offsets, nodes)
