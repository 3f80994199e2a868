import numpy as np

from fragstat.streams import block_rng, block_sizes, resolve_seed, run_blocks, stream_tag


def _draw(seed, block):
    return block_rng(seed, "streams", block).random(4)


def test_block_streams_are_reproducible_and_distinct():
    a, b = block_rng(1, "x", 0).random(8), block_rng(1, "x", 0).random(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, block_rng(1, "x", 1).random(8))
    assert not np.array_equal(a, block_rng(1, "y", 0).random(8))
    assert not np.array_equal(a, block_rng(2, "x", 0).random(8))
    assert stream_tag("x") == stream_tag("x") != stream_tag("y")


def test_block_sizes():
    assert block_sizes(10, 4) == [4, 4, 2]
    assert block_sizes(8, 4) == [4, 4]
    assert sum(block_sizes(12345, 64)) == 12345


def test_run_blocks_order_and_workers():
    tasks = [(3, k) for k in range(6)]
    serial = run_blocks(_draw, tasks, 1)
    parallel = run_blocks(_draw, tasks, 2)
    assert all(np.array_equal(x, y) for x, y in zip(serial, parallel))


def test_resolve_seed():
    assert resolve_seed(None, 7, "5") == 7
    assert resolve_seed(None, None, "5") == 5
    assert resolve_seed(None, None, None) == 42
    assert resolve_seed(0, 7) == 0
