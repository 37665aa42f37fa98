"""Swap-move cost deltas for symmetric, null-diagonal QAP instances.

A move is an unordered facility pair ``u < v`` stored at linear index
``v*(v-1)//2 + u``. Every delta here is ``cost(after swap) - cost(before)``,
so negative deltas are improving moves.

Three formulas are provided:

* full: ``2 * sum_{k != r,s} (F[r,k] - F[s,k]) * (D[p(s),p(k)] - D[p(r),p(k)])``,
  O(n) per move;
* sparse: the same sum, split over the adjacency lists of ``r`` and ``s``,
  O(deg(r) + deg(s)) per move;
* incremental: the O(1) correction of a move disjoint from the move just made.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .instance import QapInstance


class MoveId(NamedTuple):
    u: int
    v: int

    @property
    def index(self) -> int:
        return move_index(self.u, self.v)

    @classmethod
    def of(cls, a: int, b: int) -> "MoveId":
        if a == b:
            raise ValueError("a move needs two distinct facilities")
        return cls(min(a, b), max(a, b))

    @classmethod
    def from_index(cls, idx: int) -> "MoveId":
        return cls(*move_pair(idx))


def n_moves(n: int) -> int:
    return n * (n - 1) // 2


def move_index(u: int, v: int) -> int:
    if u > v:
        u, v = v, u
    return v * (v - 1) // 2 + u


def move_pair(idx: int) -> tuple[int, int]:
    v = (1 + math.isqrt(1 + 8 * idx)) // 2
    return idx - v * (v - 1) // 2, v


@njit(cache=True, inline="always")
def _index(u, v):
    return v * (v - 1) // 2 + u


@njit(cache=True)
def _pair(idx):
    v = np.int64((1.0 + math.sqrt(1.0 + 8.0 * idx)) / 2.0)
    while v * (v - 1) // 2 > idx:
        v -= 1
    while (v + 1) * v // 2 <= idx:
        v += 1
    return idx - v * (v - 1) // 2, v


@dataclass(frozen=True, eq=False)
class Permutation:
    """Facility-to-location assignment with its inverse."""

    to_location: np.ndarray
    to_facility: np.ndarray

    @classmethod
    def from_locations(cls, p) -> "Permutation":
        p = np.asarray(p, dtype=np.int64).copy()
        inv = np.full(p.shape[0], -1, dtype=np.int64)
        if p.ndim != 1 or p.size and (p.min() < 0 or p.max() >= p.size):
            raise ValueError("not a permutation")
        inv[p] = np.arange(p.size)
        if (inv < 0).any():
            raise ValueError("not a permutation")
        return cls(p, inv)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n, dtype=np.int64), np.arange(n, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.to_location.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.to_location, other.to_location)

    __hash__ = None

    def __repr__(self):
        return f"Permutation({self.to_location.tolist()})"


def apply_swap(p: Permutation, r: int, s: int) -> Permutation:
    """Return the assignment with the locations of facilities ``r`` and ``s`` exchanged."""
    if r == s:
        raise ValueError("cannot swap a facility with itself")
    loc = p.to_location.copy()
    fac = p.to_facility.copy()
    loc[r], loc[s] = loc[s], loc[r]
    fac[loc[r]] = r
    fac[loc[s]] = s
    return Permutation(loc, fac)


def total_cost(inst: QapInstance, p: Permutation | np.ndarray) -> int:
    loc = p.to_location if isinstance(p, Permutation) else np.asarray(p)
    return int((inst.flow * inst.dist[np.ix_(loc, loc)]).sum())


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _delta_full(F, D, p, r, s):
    pr = p[r]
    ps = p[s]
    acc = 0
    for k in range(F.shape[0]):
        if k == r or k == s:
            continue
        pk = p[k]
        acc += (F[r, k] - F[s, k]) * (D[ps, pk] - D[pr, pk])
    return 2 * acc


@njit(cache=True)
def _delta_sparse(ptr, idx, w, D, p, r, s):
    # the union sum splits by linearity into one pass per adjacency list,
    # so a neighbour shared by r and s is accounted for exactly once
    pr = p[r]
    ps = p[s]
    acc = 0
    for a in range(ptr[r], ptr[r + 1]):
        k = idx[a]
        if k != s:
            pk = p[k]
            acc += w[a] * (D[ps, pk] - D[pr, pk])
    for a in range(ptr[s], ptr[s + 1]):
        k = idx[a]
        if k != r:
            pk = p[k]
            acc -= w[a] * (D[ps, pk] - D[pr, pk])
    return 2 * acc


@njit(cache=True, inline="always")
def _delta_incremental(F, D, p_after, old, r, s, u, v):
    return old + 2 * (F[r, u] - F[r, v] + F[s, v] - F[s, u]) * (
        D[p_after[s], p_after[u]]
        - D[p_after[s], p_after[v]]
        + D[p_after[r], p_after[v]]
        - D[p_after[r], p_after[u]]
    )


@njit(cache=True)
def _table_sparse(ptr, idx, w, D, p, out):
    n = p.shape[0]
    m = 0
    for v in range(1, n):
        for u in range(v):
            out[m] = _delta_sparse(ptr, idx, w, D, p, u, v)
            m += 1


@njit(cache=True)
def _table_full(F, D, p, out):
    n = p.shape[0]
    m = 0
    for v in range(1, n):
        for u in range(v):
            out[m] = _delta_full(F, D, p, u, v)
            m += 1


@njit(cache=True)
def _local_cost(ptr, idx, w, D, p, z):
    """Cost of facility ``z`` against its neighbours at their current locations."""
    pz = p[z]
    acc = 0
    for a in range(ptr[z], ptr[z + 1]):
        acc += w[a] * D[pz, p[idx[a]]]
    return acc


@njit(cache=True)
def _local_costs(ptr, idx, w, D, p, out):
    for z in range(p.shape[0]):
        out[z] = _local_cost(ptr, idx, w, D, p, z)


# rows of the refresh workspace
_MARK, _COEF, _EDIST, _ROW_R, _ROW_S, _W_R, _W_S = 0, 1, 2, 3, 4, 5, 6
WORK_ROWS = 7


@njit(cache=True)
def _refresh_sparse(ptr, idx, w, D, p, deltas, r, s, local, work, nbl, changed, improved_only):
    """Bring ``deltas`` up to date after facilities ``r``, ``s`` were swapped into ``p``.

    ``local[z]`` must hold the local cost of facility ``z`` under ``p`` for
    every facility other than r, s and their neighbours; those are refreshed. ``work`` is a zeroed (WORK_ROWS, n) scratch array and
    is left zeroed; ``nbl`` needs room for deg(r) + deg(s) entries.

    Writes indices of changed entries into ``changed`` (only the improved ones
    when ``improved_only``) and returns ``(n_written, n_touched)``.
    """
    n = p.shape[0]
    mark = work[_MARK]
    coef = work[_COEF]
    edist = work[_EDIST]
    nc = 0
    touched = 0

    # neighbourhood of the swap; coef[x] = F[r,x] - F[s,x]
    nb = 0
    for a in range(ptr[r], ptr[r + 1]):
        k = idx[a]
        work[_W_R, k] = w[a]
        if k != s:
            coef[k] += w[a]
            if mark[k] == 0:
                mark[k] = 1
                nbl[nb] = k
                nb += 1
    for a in range(ptr[s], ptr[s + 1]):
        k = idx[a]
        work[_W_S, k] = w[a]
        if k != r:
            coef[k] -= w[a]
            if mark[k] == 0:
                mark[k] = 1
                nbl[nb] = k
                nb += 1
    nbl[:nb].sort()

    # local costs that moved: r, s and their neighbours
    local[r] = _local_cost(ptr, idx, w, D, p, r)
    local[s] = _local_cost(ptr, idx, w, D, p, s)
    for j in range(nb):
        local[nbl[j]] = _local_cost(ptr, idx, w, D, p, nbl[j])

    # moves containing r or s: recompute from local costs. With
    # row_x[l] = cost of x at location l, the delta of (x, y) is
    # 2 * (row_x[p_y] - local[x] - local[y] + cost of y at p_x + 2 F[x,y] D[p_x,p_y])
    for xi in range(2):
        x = r if xi == 0 else s
        row = work[_ROW_R + xi]
        for a in range(ptr[x], ptr[x + 1]):
            dk = D[p[idx[a]]]
            wk = w[a]
            for l in range(n):
                row[l] += wk * dk[l]
    for xi in range(2):
        x = r if xi == 0 else s
        row = work[_ROW_R + xi]
        wx = work[_W_R + xi]
        px = p[x]
        dx = D[px]
        lx = local[x]
        for y in range(n):
            if y == r or y == s:
                continue
            py = p[y]
            at_x = 0
            for a in range(ptr[y], ptr[y + 1]):
                at_x += w[a] * dx[p[idx[a]]]
            val = 2 * (row[py] - lx - local[y] + at_x + 2 * wx[y] * dx[py])
            m = _index(x, y) if x < y else _index(y, x)
            touched += 1
            old = deltas[m]
            if val != old:
                deltas[m] = val
                if val < old or not improved_only:
                    changed[nc] = m
                    nc += 1
    m = _index(r, s) if r < s else _index(s, r)
    touched += 1
    old = deltas[m]
    if old != 0:
        deltas[m] = -old
        if -old < old or not improved_only:
            changed[nc] = m
            nc += 1

    # moves touching a neighbour of r or s: O(1) correction. Every other
    # move has zero flow coefficient and is left alone.
    if nb > 0:
        dr = D[p[r]]
        ds = D[p[s]]
        for y in range(n):
            py = p[y]
            edist[y] = ds[py] - dr[py]
        # sweep y outermost so table addresses increase monotonically
        for y in range(n):
            if y == r or y == s:
                continue
            cy = coef[y]
            ey = edist[y]
            my = mark[y]
            for j in range(nb):
                x = nbl[j]
                if x == y or (my != 0 and y < x):
                    continue
                touched += 1
                corr = 2 * (coef[x] - cy) * (edist[x] - ey)
                if corr != 0:
                    m = _index(x, y) if x < y else _index(y, x)
                    deltas[m] += corr
                    if corr < 0 or not improved_only:
                        changed[nc] = m
                        nc += 1

    for j in range(nb):
        x = nbl[j]
        mark[x] = 0
        coef[x] = 0
    for xi in range(2):
        x = r if xi == 0 else s
        work[_ROW_R + xi, :] = 0
        for a in range(ptr[x], ptr[x + 1]):
            work[_W_R + xi, idx[a]] = 0
    return nc, touched


@njit(cache=True)
def _refresh_dense(F, D, p, deltas, r, s, coef, edist):
    """Full-scan table update after swapping ``r`` and ``s``; O(n^2)."""
    n = p.shape[0]
    prr = p[r]
    pss = p[s]
    for y in range(n):
        py = p[y]
        coef[y] = F[r, y] - F[s, y]
        edist[y] = D[pss, py] - D[prr, py]
    m = 0
    for v in range(1, n):
        cv = coef[v]
        ev = edist[v]
        v_hit = v == r or v == s
        for u in range(v):
            if v_hit or u == r or u == s:
                deltas[m] = _delta_full(F, D, p, u, v)
            else:
                deltas[m] += 2 * (coef[u] - cv) * (edist[u] - ev)
            m += 1


# ---------------------------------------------------------------- public API


def swap_delta_full(inst: QapInstance, p: Permutation, r: int, s: int) -> int:
    if r == s:
        raise ValueError("r and s must differ")
    return int(_delta_full(inst.flow, inst.dist, p.to_location, r, s))


def swap_delta_sparse(inst: QapInstance, p: Permutation, r: int, s: int) -> int:
    if r == s:
        raise ValueError("r and s must differ")
    return int(_delta_sparse(inst.adj_ptr, inst.adj_idx, inst.adj_w, inst.dist, p.to_location, r, s))


def swap_delta_incremental(
    inst: QapInstance, p_after: Permutation, old_delta: int, r: int, s: int, u: int, v: int
) -> int:
    """Delta of move (u, v) under ``p_after``, given its value before (r, s) was swapped."""
    if len({r, s, u, v}) != 4:
        raise ValueError("incremental update needs {u, v} disjoint from {r, s}; recompute instead")
    return int(_delta_incremental(inst.flow, inst.dist, p_after.to_location, old_delta, r, s, u, v))


class DeltaTable:
    """Delta of every move under one assignment, in triangular storage."""

    def __init__(self, deltas: np.ndarray):
        self.deltas = deltas

    @classmethod
    def from_scratch(cls, inst: QapInstance, p: Permutation, method: str = "sparse") -> "DeltaTable":
        out = np.empty(n_moves(inst.n), dtype=np.int64)
        if method == "sparse":
            _table_sparse(inst.adj_ptr, inst.adj_idx, inst.adj_w, inst.dist, p.to_location, out)
        elif method == "full":
            _table_full(inst.flow, inst.dist, p.to_location, out)
        else:
            raise ValueError(f"unknown method {method!r}")
        return cls(out)

    def __len__(self):
        return self.deltas.shape[0]

    def __getitem__(self, move) -> int:
        if isinstance(move, tuple):
            move = move_index(*move)
        return int(self.deltas[move])

    def __eq__(self, other):
        if not isinstance(other, DeltaTable):
            return NotImplemented
        return np.array_equal(self.deltas, other.deltas)

    __hash__ = None


def delta_matrix(inst: QapInstance, p: Permutation | np.ndarray) -> np.ndarray:
    """All deltas as a dense symmetric matrix, via matrix products.

    Independent of the per-move kernels; used for audits.
    """
    loc = p.to_location if isinstance(p, Permutation) else np.asarray(p)
    F = inst.flow
    Dp = inst.dist[np.ix_(loc, loc)]
    A = F @ Dp
    diag = np.diag(A)
    out = 2 * (A + A.T - diag[:, None] - diag[None, :] + 2 * F * Dp)
    np.fill_diagonal(out, 0)
    return out


def table_from_matrix(mat: np.ndarray) -> np.ndarray:
    v, u = np.tril_indices(mat.shape[0], -1)
    # tril_indices walks rows v ascending, columns u < v ascending: linear order
    return mat[u, v]


def refresh_after_move(
    inst: QapInstance, p_after: Permutation, table: DeltaTable, r: int, s: int
) -> list[tuple[MoveId, int]]:
    """Update ``table`` in place for the swap (r, s) that produced ``p_after``.

    Returns every move whose delta changed, with its new value.
    """
    if r == s:
        raise ValueError("r and s must differ")
    args = (inst.adj_ptr, inst.adj_idx, inst.adj_w, inst.dist, p_after.to_location)
    local = np.empty(inst.n, dtype=np.int64)
    _local_costs(*args, local)
    # the kernel refreshes the entries of r, s and their neighbours itself
    work = np.zeros((WORK_ROWS, inst.n), dtype=np.int64)
    nbl = np.empty(max(int(inst.degrees.max(initial=0)), 1) * 2, dtype=np.int64)
    changed = np.empty(_changed_capacity(inst), dtype=np.int64)
    nc, _ = _refresh_sparse(*args, table.deltas, r, s, local, work, nbl, changed, False)
    return [(MoveId.from_index(int(m)), int(table.deltas[m])) for m in changed[:nc]]


def _changed_capacity(inst: QapInstance) -> int:
    max_deg = int(inst.degrees.max(initial=0))
    return (2 * inst.n + 1) + 2 * max_deg * inst.n
