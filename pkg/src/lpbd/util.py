"""Seeded RNG streams and small shared helpers."""

import os

import numpy as np

# Every stochastic subsystem draws from its own child stream of the user
# seed, so toggling one feature (e.g. precision mode) never reshuffles the
# draws of another (e.g. the dataset partition).
STREAM_PARTITION = 1
STREAM_RADII = 2
STREAM_INIT = 3
STREAM_SHUFFLE = 4
STREAM_SYNTH = 5
STREAM_STRIP = 6
STREAM_REVERSE = 7


def seeded_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream); stable across runs."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def worker_count() -> int:
    """Worker cap from LPBD_THREADS; defaults to 1 (serial)."""
    try:
        n = int(os.environ.get("LPBD_THREADS", "1"))
    except ValueError:
        return 1
    return max(1, n)


def map_ordered(fn, items):
    """Order-preserving map over items, threaded when LPBD_THREADS > 1.

    fn must be pure; results are identical to the serial map regardless of
    scheduling.
    """
    n = worker_count()
    if n <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
