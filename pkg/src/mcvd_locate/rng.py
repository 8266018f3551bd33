"""Counter-based random streams.

Every molecule owns a SplitMix64 stream keyed by a hash of
(global seed, sample id, pilot id, molecule id). Draw k of a stream is a
pure function of (key, k), so results never depend on scheduling order or
thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 2.0 * math.pi
_MASK = (1 << 64) - 1


@njit(cache=True)
def mix64(x):
    z = x
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def derive(parent, index):
    """Child key for `index` under `parent` (both uint64)."""
    return mix64(parent ^ mix64((index + _ONE) * GOLDEN))


@njit(cache=True)
def uniform(key, counter):
    """Uniform double in (0, 1] from draw `counter` of stream `key`."""
    x = mix64(key + (counter + _ONE) * GOLDEN)
    return (np.float64(x >> _S11) + 1.0) * _INV53


@njit(cache=True)
def normal_pair(key, counter):
    """Two independent N(0,1) draws (Box-Muller) using draws counter, counter+1."""
    u1 = uniform(key, counter)
    u2 = uniform(key, counter + _ONE)
    rad = math.sqrt(-2.0 * math.log(u1))
    return rad * math.cos(_TWO_PI * u2), rad * math.sin(_TWO_PI * u2)


def derive_seed(parent: int, *path: int) -> int:
    """Python-side key derivation along a path of integer indices."""
    key = np.uint64(parent & _MASK)
    for i in path:
        key = derive(key, np.uint64(i & _MASK))
    return int(key)
