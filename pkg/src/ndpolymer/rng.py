"""Counter-based random numbers.

Every random quantity in the package is a pure function of
``(master seed, stream label, index...)``: SplitMix64 finalisers applied to
a combined key. Lazily generated site values and replica streams therefore
do not depend on execution order or chunking.
"""
from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_K_COORD = np.uint64(0xD2B74407B1CE6E93)
_TWO_M53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def stream_key(seed, index):
    """Key of the ``index``-th sub-stream of ``seed``."""
    return mix64(np.uint64(seed) ^ mix64(np.uint64(index) * GOLDEN + GOLDEN))


@njit(cache=True, inline="always")
def draw_u64(key, counter):
    return mix64(key + (np.uint64(counter) + np.uint64(1)) * GOLDEN)


@njit(cache=True, inline="always")
def to_unit_open(x):
    """Uniform on (0, 1]: 53 high bits, shifted by one ulp."""
    return (float(x >> np.uint64(11)) + 1.0) * _TWO_M53


@njit(cache=True, inline="always")
def below(x, n):
    """Uniform integer in [0, n) from a 64-bit draw (multiply-shift)."""
    return np.int64(((x >> np.uint64(32)) * np.uint64(n)) >> np.uint64(32))


@njit(cache=True)
def site_key_1(seed, coords):
    h = np.uint64(seed) ^ GOLDEN
    for c in coords:
        h = mix64(h ^ (np.uint64(np.int64(c)) * _K_COORD + GOLDEN))
    return h


@njit(cache=True)
def site_uniforms(seed, sites):
    n = sites.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = to_unit_open(mix64(site_key_1(seed, sites[i])))
    return out


def label_seed(master_seed: int, label: str) -> int:
    """Derive a 64-bit seed for a named stream."""
    digest = hashlib.sha256(f"{int(master_seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generator(master_seed: int, label: str, index: int = 0) -> np.random.Generator:
    """numpy Generator for a named stream (used where vector draws suffice)."""
    ss = np.random.SeedSequence([label_seed(master_seed, label) & 0xFFFFFFFF,
                                 label_seed(master_seed, label) >> 32, int(index)])
    return np.random.Generator(np.random.Philox(ss))


@njit(cache=True, inline="always")
def step_direction(key, j, d):
    """Axis and sign of step ``j`` of the walk keyed by ``key``."""
    r = below(draw_u64(key, j), 2 * d)
    return r >> 1, 1 - 2 * (r & 1)
