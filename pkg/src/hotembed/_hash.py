"""Seeded 64-bit mixing hash (splitmix64 finalizer).

Three implementations are kept bit-compatible: plain ints for scalar use,
numpy arrays for vectorized lookups, and a numba version for the sketch
kernels.
"""
import numba
import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(x):
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * _M1) & _MASK
    x = ((x ^ (x >> 27)) * _M2) & _MASK
    return x ^ (x >> 31)


def seed_key(seed, salt=0):
    """Derive a 64-bit hash key from an integer seed and a salt."""
    return mix64((mix64(seed & _MASK) ^ (salt * _GOLDEN)) & _MASK)


def hash64(x, key):
    return mix64((x ^ key) & _MASK)


def hash64_array(x, key):
    x = np.asarray(x, dtype=np.uint64) ^ np.uint64(key)
    x = x + np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_M2)
    return x ^ (x >> np.uint64(31))


def uniform_array(x, key):
    """Map integers to floats in [0, 1) through the keyed hash (53-bit)."""
    return (hash64_array(x, key) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@numba.njit(cache=True, nogil=True)
def hash64_nb(x, key):
    z = (x ^ key) + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))
