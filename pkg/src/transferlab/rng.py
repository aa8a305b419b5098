"""Counter-based random streams.

Every draw is addressed by ``(seed, stream_id, counter)`` through numpy's
Philox generator, so results never depend on the order in which workers
consume randomness.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(seed, stream_id):
    return np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)


def generator(seed, stream_id=0, counter=0):
    """Return a Philox-backed Generator positioned at ``counter``.

    Parameters
    ----------
    seed : int
        64-bit user seed.
    stream_id : int
        Independent stream label (sample block, probe id, ...).
    counter : int
        Block offset inside the stream; one block yields four doubles.
    """
    ctr = np.array([int(counter) & _MASK64, 0, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed, stream_id), counter=ctr))


def uniform_at(seed, stream_id, counter):
    """Single uniform deviate in [0, 1) addressed by ``(seed, stream_id, counter)``."""
    return float(generator(seed, stream_id, counter).random())


def uniforms(seed, stream_id, counter, size):
    """Block of uniforms starting at block ``counter`` of the stream."""
    return generator(seed, stream_id, counter).random(size)
