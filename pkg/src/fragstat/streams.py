"""Deterministic random streams.

Every Monte Carlo engine works on fixed-size blocks of replicates. Block ``k``
of an experiment draws from a Philox generator keyed by
``(seed, stream tag, k)``. Results are assembled in block order. The output
therefore depends only on the seed and the configuration, never on how many
worker processes executed the blocks.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

DEFAULT_SEED = 42


def stream_tag(name: str) -> int:
    """Stable 32-bit integer for a stream name (independent of PYTHONHASHSEED)."""
    return zlib.crc32(name.encode("utf-8"))


def block_rng(seed: int, tag: str | int, block: int) -> np.random.Generator:
    """Generator for one replicate block.

    Parameters
    ----------
    seed : int
        Experiment seed (any non-negative integer below 2**64).
    tag : str or int
        Stream name, so that unrelated experiments sharing a seed do not
        share random numbers.
    block : int
        Block index.
    """
    if isinstance(tag, str):
        tag = stream_tag(tag)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(tag), int(block)])
    return np.random.Generator(np.random.Philox(ss))


def block_sizes(total: int, block: int) -> list[int]:
    """Split ``total`` replicates into consecutive blocks of size ``block``."""
    if total < 0:
        raise ValueError("total must be non-negative")
    full, rest = divmod(int(total), int(block))
    sizes = [int(block)] * full
    if rest:
        sizes.append(rest)
    return sizes


def run_blocks(fn: Callable, tasks: Sequence[tuple], workers: int = 1) -> list:
    """Apply ``fn(*task)`` to every task, preserving task order.

    With ``workers > 1`` the tasks run in a process pool; ``fn`` must then be
    a module-level function with picklable arguments.
    """
    tasks = list(tasks)
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=int(workers)) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def resolve_seed(*candidates) -> int:
    """First candidate that is not None, else :data:`DEFAULT_SEED`."""
    for c in candidates:
        if c is not None and c != "":
            return int(c)
    return DEFAULT_SEED
