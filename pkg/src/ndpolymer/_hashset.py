"""Open-addressing hash set over packed lattice sites (numba).

Slots carry a stamp so a table can be reused across replicas without
clearing: a slot is live only if its stamp equals the current one.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .rng import mix64


def packing(d: int) -> tuple[int, int]:
    """Bits per coordinate and offset such that packed keys fit in 62 bits."""
    bits = 62 // d
    return bits, 1 << (bits - 1)


def table_size(n_items: int) -> int:
    size = 16
    while size < 2 * n_items:
        size <<= 1
    return size


def new_table(n_items: int):
    size = table_size(n_items)
    return np.full(size, -1, np.int64), np.zeros(size, np.int64), np.zeros(size, np.int64)


@njit(cache=True, inline="always")
def pack(pos, bits, off):
    key = np.int64(0)
    for c in pos:
        key = (key << bits) | (c + off)
    return key


@njit(cache=True, inline="always")
def find_or_insert(keys, stamps, stamp, key):
    """Return ``(slot, inserted)``; ``inserted`` is True when ``key`` was absent."""
    mask = keys.shape[0] - 1
    h = np.int64(mix64(np.uint64(key)) & np.uint64(mask))
    while True:
        if stamps[h] != stamp:
            keys[h] = key
            stamps[h] = stamp
            return h, True
        if keys[h] == key:
            return h, False
        h = (h + 1) & mask


@njit(cache=True, inline="always")
def lookup(keys, stamps, stamp, key):
    mask = keys.shape[0] - 1
    h = np.int64(mix64(np.uint64(key)) & np.uint64(mask))
    while True:
        if stamps[h] != stamp:
            return -1
        if keys[h] == key:
            return h
        h = (h + 1) & mask
