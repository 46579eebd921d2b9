"""Held-Karp dynamic program over (subset, last point) states.

``dp[mask, j]`` is the minimal length of a path that starts at the origin,
visits exactly the points of ``mask`` and ends at point ``j``. Witnesses are
rebuilt by exact float re-evaluation of the winning transition, so no parent
table is stored; ties go to the smallest index.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .errors import ValidationError

EXACT_CAP = 22


def distances(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=np.float64)
    d0 = np.sqrt((pts * pts).sum(axis=1))
    diff = pts[:, None, :] - pts[None, :, :]
    return d0, np.sqrt((diff * diff).sum(axis=2))


@njit(cache=True)
def _held_karp(d0, dist):
    m = d0.shape[0]
    full = 1 << m
    dp = np.full((full, m), np.inf)
    for j in range(m):
        dp[1 << j, j] = d0[j]
    for mask in range(1, full):
        for j in range(m):
            cur = dp[mask, j]
            if cur == np.inf:
                continue
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nm = mask | (1 << k)
                v = cur + dist[j, k]
                if v < dp[nm, k]:
                    dp[nm, k] = v
    best = np.empty(full)
    best[0] = 0.0
    for mask in range(1, full):
        b = np.inf
        for j in range(m):
            if dp[mask, j] < b:
                b = dp[mask, j]
        best[mask] = b
    return dp, best


@njit(cache=True)
def _backtrack(dp, d0, dist, mask):
    m = d0.shape[0]
    k = 0
    for j in range(m):
        if (mask >> j) & 1:
            k += 1
    order = np.empty(k, np.int64)
    if k == 0:
        return order
    target = np.inf
    end = -1
    for j in range(m):
        if (mask >> j) & 1 and dp[mask, j] < target:
            target = dp[mask, j]
            end = j
    pos = k - 1
    order[pos] = end
    while pos > 0:
        prev_mask = mask & ~(1 << end)
        found = -1
        for i in range(m):
            if (prev_mask >> i) & 1 and dp[prev_mask, i] + dist[i, end] == dp[mask, end]:
                found = i
                break
        mask = prev_mask
        end = found
        pos -= 1
        order[pos] = end
    return order


def check_size(m: int, cap: int = EXACT_CAP) -> None:
    if m > cap:
        raise ValidationError(f"exact mode handles at most {cap} points, got {m}",
                              condition=f"m <= {cap}")


def subset_lengths(points) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(dp, best, d0, dist)``; ``best[mask]`` is the shortest tour length."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    check_size(len(pts))
    d0, dist = distances(pts)
    dp, best = _held_karp(d0, dist)
    return dp, best, d0, dist


def best_order(dp, d0, dist, mask: int) -> np.ndarray:
    return _backtrack(dp, d0, dist, int(mask))


@njit(cache=True)
def _popcounts(n):
    out = np.zeros(1 << n, np.int64)
    for mask in range(1, 1 << n):
        out[mask] = out[mask >> 1] + (mask & 1)
    return out


@njit(cache=True)
def _subset_sums(w):
    n = w.shape[0]
    out = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        low = mask & (-mask)
        j = 0
        while (low >> j) != 1:
            j += 1
        out[mask] = out[mask ^ low] + w[j]
    return out


def popcounts(n: int) -> np.ndarray:
    return _popcounts(n)


def subset_sums(w) -> np.ndarray:
    return _subset_sums(np.asarray(w, dtype=np.float64))


def nearest_neighbour_order(points, budget: float = np.inf) -> tuple[list[int], float]:
    """Greedy path from the origin, always moving to the closest unvisited point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    left = list(range(len(pts)))
    here = np.zeros(pts.shape[1])
    order, length = [], 0.0
    while left:
        dists = [float(np.linalg.norm(pts[i] - here)) for i in left]
        j = int(np.argmin(dists))
        if length + dists[j] > budget:
            break
        length += dists[j]
        order.append(left.pop(j))
        here = pts[order[-1]]
    return order, length


# ------------------------------------------------ budgeted sparse variant


@njit(cache=True)
def _budget_dp(d0, dist, budget, cap):
    """States (mask, end) whose minimal length is within ``budget``.

    Breadth-first by subset size, so every state is final before it is
    expanded. Returns ``n = -1`` when more than ``cap`` states are needed.
    """
    m = d0.shape[0]
    size = 16
    while size < 2 * cap:
        size <<= 1
    smask = size - 1
    keys = np.full(size, -1, np.int64)
    slot_idx = np.zeros(size, np.int64)
    st_mask = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_len = np.empty(cap)
    n = 0
    for j in range(m):
        if d0[j] <= budget:
            if n == cap:
                return keys, slot_idx, st_mask, st_end, st_len, -1
            key = (np.int64(1) << j) * m + j
            h = (key * 0x9E3779B1) & smask
            while keys[h] != -1:
                h = (h + 1) & smask
            keys[h] = key
            slot_idx[h] = n
            st_mask[n] = np.int64(1) << j
            st_end[n] = j
            st_len[n] = d0[j]
            n += 1
    head = 0
    while head < n:
        mask = st_mask[head]
        e = st_end[head]
        L = st_len[head]
        for k in range(m):
            if (mask >> k) & 1:
                continue
            v = L + dist[e, k]
            if v > budget:
                continue
            nm = mask | (np.int64(1) << k)
            key = nm * m + k
            h = (key * 0x9E3779B1) & smask
            found = -1
            while keys[h] != -1:
                if keys[h] == key:
                    found = slot_idx[h]
                    break
                h = (h + 1) & smask
            if found >= 0:
                if v < st_len[found]:
                    st_len[found] = v
            else:
                if n == cap:
                    return keys, slot_idx, st_mask, st_end, st_len, -1
                keys[h] = key
                slot_idx[h] = n
                st_mask[n] = nm
                st_end[n] = k
                st_len[n] = v
                n += 1
        head += 1
    return keys, slot_idx, st_mask, st_end, st_len, n


@njit(cache=True)
def _state_len(keys, slot_idx, st_len, m, mask, end):
    smask = keys.shape[0] - 1
    key = mask * m + end
    h = (key * 0x9E3779B1) & smask
    while keys[h] != -1:
        if keys[h] == key:
            return st_len[slot_idx[h]]
        h = (h + 1) & smask
    return np.inf


@njit(cache=True)
def _budget_backtrack(keys, slot_idx, st_len, dist, m, mask, end):
    k = 0
    for j in range(m):
        if (mask >> j) & 1:
            k += 1
    order = np.empty(k, np.int64)
    pos = k - 1
    order[pos] = end
    cur = _state_len(keys, slot_idx, st_len, m, mask, end)
    while pos > 0:
        prev = mask & ~(np.int64(1) << end)
        found = -1
        for i in range(m):
            if (prev >> i) & 1:
                li = _state_len(keys, slot_idx, st_len, m, prev, i)
                if li + dist[i, end] == cur:
                    found = i
                    break
        mask, end, cur = prev, found, _state_len(keys, slot_idx, st_len, m, prev, found)
        pos -= 1
        order[pos] = end
    return order


class BudgetDP:
    """Subsets reachable by an origin-anchored path of length at most ``budget``.

    ``masks``/``lengths`` list each feasible subset once with its minimal
    length and best end point (smallest index on ties).
    """

    def __init__(self, points, budget: float, cap: int = 1 << 12):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        check_size(len(pts))
        self.m = len(pts)
        self.d0, self.dist = distances(pts)
        while True:
            out = _budget_dp(self.d0, self.dist, float(budget), cap)
            if out[-1] >= 0:
                break
            cap *= 4
        self._keys, self._slot, st_mask, st_end, st_len, n = out
        self._len = st_len
        st_mask, st_end, st_len = st_mask[:n], st_end[:n], st_len[:n]
        order = np.lexsort((st_end, st_len, st_mask))
        first = np.ones(n, bool)
        first[1:] = st_mask[order][1:] != st_mask[order][:-1]
        sel = order[first]
        self.masks = st_mask[sel]
        self.lengths = st_len[sel]
        self.ends = st_end[sel]

    def order(self, i: int) -> np.ndarray:
        """Visit order of the ``i``-th feasible subset."""
        return _budget_backtrack(self._keys, self._slot, self._len, self.dist, self.m,
                                 np.int64(self.masks[i]), np.int64(self.ends[i]))
