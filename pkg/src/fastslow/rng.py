"""Counter-based random numbers keyed by (seed, stream, counter).

Every draw is a pure function of its key, so results do not depend on how
paths are split across workers. The mixer is the SplitMix64 finalizer applied
to a Weyl-sequence position, vectorised over numpy uint64 arrays.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STEP = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed, streams):
    """Per-stream 64-bit keys derived from a global seed."""
    base = _mix(np.array([int(seed) & _MASK64], dtype=np.uint64))[0]
    streams = np.asarray(streams, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(base ^ _mix((streams + np.uint64(1)) * _GOLDEN))


def raw(keys, counter):
    """64-bit outputs; ``keys`` and ``counter`` broadcast against each other."""
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(keys + counter * _STEP + _GOLDEN)


def uniform(keys, counter):
    """Doubles in [0, 1) with 53 random bits."""
    return (raw(keys, counter) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def normal(keys, counter):
    """Standard normals by Box-Muller; consumes counters 2*counter and 2*counter+1."""
    counter = np.asarray(counter, dtype=np.uint64)
    u1 = uniform(keys, np.uint64(2) * counter)
    u2 = uniform(keys, np.uint64(2) * counter + np.uint64(1))
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return r * np.cos(2.0 * np.pi * u2)


class CounterRNG:
    """Convenience wrapper: one key per path, counters advanced by the caller."""

    def __init__(self, seed, paths):
        self.seed = int(seed)
        self.keys = stream_keys(self.seed, paths)

    def uniform(self, counter):
        return uniform(self.keys, counter)

    def normal(self, counter):
        return normal(self.keys, counter)
