"""Handle-indexed binary heaps with lazy key repair, and the five-queue bank.

A queue over handles ``0..capacity-1`` is made of

* ``heap``: a ``(capacity, 2)`` array of ``(key, handle)`` slots in heap order,
* ``pos``: the slot of each handle, -1 when absent,
* ``stored``: the key each member was last positioned with,
* ``true``: the authoritative key of each handle.

Keys are compared as ``(key, handle)`` so the order is total. An update that
makes a key smaller is applied at once; an update that makes it larger only
changes ``true`` and leaves the entry stale. Stored keys therefore never
exceed true keys, and a stale entry is repaired only when it reaches the top.
"""
from __future__ import annotations

import enum

import numpy as np
from numba import njit

INELIGIBLE_TABU = 0
AUTHORIZED_TABU = 1
INELIGIBLE_DELTA = 2
AUTHORIZED_DELTA = 3
ASPIRED_DELTA = 4
N_QUEUES = 5


class MoveState(enum.IntEnum):
    INELIGIBLE = 0
    AUTHORIZED = 1
    ASPIRED = 2


def state_of(current_iter: int, eligible_iter: int, aspiration: int) -> MoveState:
    if current_iter <= eligible_iter:
        return MoveState.INELIGIBLE
    if current_iter - aspiration > eligible_iter:
        return MoveState.ASPIRED
    return MoveState.AUTHORIZED


# ---------------------------------------------------------------- heap kernels


@njit(cache=True)
def _sift_up(heap, pos, i, key, h):
    while i > 0:
        parent = (i - 1) >> 1
        pk = heap[parent, 0]
        if key < pk or (key == pk and h < heap[parent, 1]):
            ph = heap[parent, 1]
            heap[i, 0] = pk
            heap[i, 1] = ph
            pos[ph] = i
            i = parent
        else:
            break
    heap[i, 0] = key
    heap[i, 1] = h
    pos[h] = i


@njit(cache=True)
def _sift_down(heap, pos, size, i, key, h):
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        ck = heap[c, 0]
        ch = heap[c, 1]
        if c + 1 < size:
            k2 = heap[c + 1, 0]
            h2 = heap[c + 1, 1]
            if k2 < ck or (k2 == ck and h2 < ch):
                c += 1
                ck = k2
                ch = h2
        if ck < key or (ck == key and ch < h):
            heap[i, 0] = ck
            heap[i, 1] = ch
            pos[ch] = i
            i = c
        else:
            break
    heap[i, 0] = key
    heap[i, 1] = h
    pos[h] = i


@njit(cache=True)
def q_insert(heap, pos, stored, sizes, qi, true, h):
    key = true[h]
    stored[h] = key
    i = sizes[qi]
    sizes[qi] = i + 1
    _sift_up(heap, pos, i, key, h)


@njit(cache=True)
def q_remove(heap, pos, sizes, qi, h):
    i = pos[h]
    last = sizes[qi] - 1
    sizes[qi] = last
    pos[h] = -1
    if i != last:
        mk = heap[last, 0]
        mh = heap[last, 1]
        if i > 0:
            parent = (i - 1) >> 1
            pk = heap[parent, 0]
            if mk < pk or (mk == pk and mh < heap[parent, 1]):
                _sift_up(heap, pos, i, mk, mh)
                return
        _sift_down(heap, pos, last, i, mk, mh)


@njit(cache=True)
def q_improve(heap, pos, stored, true, h):
    # eager only when the true key beats the stored one; otherwise stay stale
    key = true[h]
    if key < stored[h]:
        stored[h] = key
        _sift_up(heap, pos, pos[h], key, h)


@njit(cache=True)
def q_peek(heap, pos, stored, sizes, qi, true):
    """Top handle after repairing stale tops, or -1 when empty."""
    size = sizes[qi]
    while size > 0:
        h = heap[0, 1]
        key = true[h]
        if heap[0, 0] == key:
            return h
        stored[h] = key
        _sift_down(heap, pos, size, 0, key, h)
    return -1


@njit(cache=True)
def q_build(heap, pos, stored, sizes, qi, true, handles):
    """Heapify ``handles`` into an empty queue (Floyd, linear time)."""
    m = handles.shape[0]
    for i in range(m):
        h = handles[i]
        heap[i, 0] = true[h]
        heap[i, 1] = h
        pos[h] = i
        stored[h] = true[h]
    sizes[qi] = m
    for i in range(m // 2 - 1, -1, -1):
        _sift_down(heap, pos, m, i, heap[i, 0], heap[i, 1])


# ---------------------------------------------------------------- bank kernels
#
# The two tabu queues share one pos row and the three delta queues another: a
# move sits in at most one queue of each group. Keys live in (n_moves, 2)
# arrays holding (true, stored) side by side, so checking whether a fresh
# delta beats its stored key reads the line the delta update just wrote.


@njit(cache=True)
def bank_migrate(heaps, pos, dkeys, tkeys, sizes, tags, t, aspiration, log):
    """Move expired tabu entries forward; returns the number of transitions.

    Transitions are written to ``log`` as (handle, old, new) while it has room.
    """
    nlog = 0
    cap = log.shape[0]
    pt = pos[0]
    pd = pos[1]
    deltas = dkeys[:, 0]
    sd = dkeys[:, 1]
    elig = tkeys[:, 0]
    st = tkeys[:, 1]
    while sizes[INELIGIBLE_TABU] > 0:
        h = q_peek(heaps[0], pt, st, sizes, INELIGIBLE_TABU, elig)
        if elig[h] >= t:
            break
        q_remove(heaps[0], pt, sizes, INELIGIBLE_TABU, h)
        q_remove(heaps[2], pd, sizes, INELIGIBLE_DELTA, h)
        q_insert(heaps[1], pt, st, sizes, AUTHORIZED_TABU, elig, h)
        q_insert(heaps[3], pd, sd, sizes, AUTHORIZED_DELTA, deltas, h)
        tags[h] = 1
        if nlog < cap:
            log[nlog, 0] = h
            log[nlog, 1] = 0
            log[nlog, 2] = 1
        nlog += 1
    while sizes[AUTHORIZED_TABU] > 0:
        h = q_peek(heaps[1], pt, st, sizes, AUTHORIZED_TABU, elig)
        if elig[h] >= t - aspiration:
            break
        q_remove(heaps[1], pt, sizes, AUTHORIZED_TABU, h)
        q_remove(heaps[3], pd, sizes, AUTHORIZED_DELTA, h)
        q_insert(heaps[4], pd, sd, sizes, ASPIRED_DELTA, deltas, h)
        tags[h] = 2
        if nlog < cap:
            log[nlog, 0] = h
            log[nlog, 1] = 1
            log[nlog, 2] = 2
        nlog += 1
    return nlog


@njit(cache=True)
def bank_reset(heaps, pos, dkeys, tkeys, sizes, tags, h, new_elig):
    tag = tags[h]
    q_remove(heaps[2 + tag], pos[1], sizes, 2 + tag, h)
    if tag < 2:
        q_remove(heaps[tag], pos[0], sizes, tag, h)
    tkeys[h, 0] = new_elig
    q_insert(heaps[0], pos[0], tkeys[:, 1], sizes, INELIGIBLE_TABU, tkeys[:, 0], h)
    q_insert(heaps[2], pos[1], dkeys[:, 1], sizes, INELIGIBLE_DELTA, dkeys[:, 0], h)
    tags[h] = 0


@njit(cache=True)
def bank_push(heaps, pos, dkeys, tags, changed, nc):
    """Propagate new delta values for ``changed[:nc]`` to their delta queues.

    Entries whose value got worse need no work here: their stored key already
    bounds the new value from below.
    """
    pd = pos[1]
    for i in range(nc):
        h = changed[i]
        v = dkeys[h, 0]
        if v < dkeys[h, 1]:
            dkeys[h, 1] = v
            _sift_up(heaps[2 + tags[h]], pd, pd[h], v, h)


@njit(cache=True)
def bank_select(heaps, pos, dkeys, tkeys, sizes, current_cost, best_cost, out):
    """Pick the next move; writes (move, rule) into ``out``.

    Rule 1 is the global best move when it beats the best cost, 2 the best
    aspired move, 3 the best authorized move, 4 the soonest-eligible
    ineligible move.
    """
    deltas = dkeys[:, 0]
    sd = dkeys[:, 1]
    best = -1
    tops = np.empty(3, dtype=np.int64)
    for j in range(3):
        dq = 2 + j
        h = q_peek(heaps[dq], pos[1], sd, sizes, dq, deltas)
        tops[j] = h
        if h >= 0 and (best < 0 or deltas[h] < deltas[best] or (deltas[h] == deltas[best] and h < best)):
            best = h
    if best < 0:
        out[0] = -1
        out[1] = 0
    elif current_cost + deltas[best] < best_cost:
        out[0] = best
        out[1] = 1
    elif tops[2] >= 0:
        out[0] = tops[2]
        out[1] = 2
    elif tops[1] >= 0:
        out[0] = tops[1]
        out[1] = 3
    else:
        out[0] = q_peek(heaps[0], pos[0], tkeys[:, 1], sizes, INELIGIBLE_TABU, tkeys[:, 0])
        out[1] = 4


# ---------------------------------------------------------------- Python API


class LazyIndexedQueue:
    """Min-queue over integer handles ``0..capacity-1`` with lazy worsening updates.

    >>> q = LazyIndexedQueue(4)
    >>> for h, k in [(0, 5), (1, 2), (2, 9)]:
    ...     q.insert(h, k)
    >>> q.peek_valid_min()
    (1, 2)
    >>> q.update_key(1, 7)
    >>> q.peek_valid_min()
    (0, 5)
    """

    def __init__(self, capacity: int):
        self.heap = np.zeros((capacity, 2), dtype=np.int64)
        self.pos = np.full(capacity, -1, dtype=np.int64)
        self.stored = np.zeros(capacity, dtype=np.int64)
        self.true = np.zeros(capacity, dtype=np.int64)
        self._size = np.zeros(1, dtype=np.int64)

    def __len__(self) -> int:
        return int(self._size[0])

    def __contains__(self, handle: int) -> bool:
        return 0 <= handle < self.pos.shape[0] and self.pos[handle] >= 0

    def _check_member(self, handle):
        if handle not in self:
            raise KeyError(f"handle {handle} is not in the queue")

    def insert(self, handle: int, key: int) -> None:
        if not 0 <= handle < self.pos.shape[0]:
            raise IndexError(f"handle {handle} out of range")
        if handle in self:
            raise ValueError(f"handle {handle} is already in the queue")
        self.true[handle] = key
        q_insert(self.heap, self.pos, self.stored, self._size, 0, self.true, handle)

    def remove(self, handle: int) -> None:
        self._check_member(handle)
        q_remove(self.heap, self.pos, self._size, 0, handle)
        self.true[handle] = 0

    def update_key(self, handle: int, key: int) -> None:
        self._check_member(handle)
        self.true[handle] = key
        q_improve(self.heap, self.pos, self.stored, self.true, handle)

    def peek_valid_min(self) -> tuple[int, int] | None:
        h = q_peek(self.heap, self.pos, self.stored, self._size, 0, self.true)
        if h < 0:
            return None
        return int(h), int(self.true[h])

    def pop(self) -> tuple[int, int]:
        top = self.peek_valid_min()
        if top is None:
            raise IndexError("pop from empty queue")
        self.remove(top[0])
        return top

    def key(self, handle: int) -> int:
        self._check_member(handle)
        return int(self.true[handle])

    def is_stale(self, handle: int) -> bool:
        self._check_member(handle)
        return bool(self.stored[handle] != self.true[handle])

    def stale_count(self) -> int:
        members = self.heap[: len(self), 1]
        return int((self.stored[members] != self.true[members]).sum())

    def check(self) -> list[str]:
        """Structural audit: heap order on stored keys and lazy soundness."""
        return _check_heap(self.heap[: len(self)], self.pos, self.stored, self.true)


def _check_heap(slots, pos, stored, true, label="queue") -> list[str]:
    problems = []
    handles = slots[:, 1]
    if not np.array_equal(pos[handles], np.arange(handles.size)):
        problems.append(f"{label}: pos does not invert heap")
    if not np.array_equal(slots[:, 0], stored[handles]):
        problems.append(f"{label}: heap keys out of sync with stored keys")
    if (stored[handles] > true[handles]).any():
        problems.append(f"{label}: stored key exceeds true key")
    child = np.arange(1, handles.size)
    pk, ck = slots[(child - 1) // 2], slots[child]
    if ((pk[:, 0] > ck[:, 0]) | ((pk[:, 0] == ck[:, 0]) & (pk[:, 1] > ck[:, 1]))).any():
        problems.append(f"{label}: heap order broken")
    return problems


class QueueBank:
    """The five queues driving move selection.

    The bank owns the per-move delta and eligible-iteration arrays and exposes
    them as :attr:`deltas` and :attr:`elig`, which are views into its key
    storage. Change a delta with :meth:`update_delta`, or write ``deltas``
    directly and then call :meth:`push` with the changed moves.
    """

    def __init__(self, deltas: np.ndarray, elig: np.ndarray | None = None):
        m = deltas.shape[0]
        self.dkeys = np.zeros((m, 2), dtype=np.int64)
        self.tkeys = np.zeros((m, 2), dtype=np.int64)
        self.dkeys[:, 0] = deltas
        if elig is not None:
            self.tkeys[:, 0] = elig
        self.heaps = np.zeros((N_QUEUES, m, 2), dtype=np.int64)
        self.pos = np.full((2, m), -1, dtype=np.int64)
        self.sizes = np.zeros(N_QUEUES, dtype=np.int64)
        self.tags = np.zeros(m, dtype=np.int8)

    @property
    def deltas(self) -> np.ndarray:
        return self.dkeys[:, 0]

    @property
    def elig(self) -> np.ndarray:
        return self.tkeys[:, 0]

    @property
    def n_moves(self) -> int:
        return self.dkeys.shape[0]

    def _arrays(self, queue):
        keys = self.tkeys if queue < 2 else self.dkeys
        return self.heaps[queue], self.pos[0 if queue < 2 else 1], keys[:, 1], keys[:, 0]

    def _build(self, queue, handles):
        heap, pos, stored, true = self._arrays(queue)
        q_build(heap, pos, stored, self.sizes, queue, true, handles)

    @classmethod
    def all_ineligible(cls, deltas: np.ndarray, elig: np.ndarray | None = None) -> "QueueBank":
        bank = cls(deltas, elig)
        handles = np.arange(bank.n_moves, dtype=np.int64)
        bank._build(INELIGIBLE_TABU, handles)
        bank._build(INELIGIBLE_DELTA, handles)
        return bank

    @classmethod
    def from_state(cls, deltas: np.ndarray, elig: np.ndarray, current_iter: int, aspiration: int) -> "QueueBank":
        """Bank with every move already in the queues matching its state at ``current_iter``."""
        bank = cls(deltas, elig)
        bank.tags[:] = _states(current_iter, bank.elig, aspiration)
        for tag in range(3):
            handles = np.nonzero(bank.tags == tag)[0].astype(np.int64)
            bank._build(2 + tag, handles)
            if tag < 2:
                bank._build(tag, handles)
        return bank

    def state(self, move: int) -> MoveState:
        return MoveState(int(self.tags[move]))

    def migrate_states(self, current_iter: int, aspiration: int) -> list[tuple[int, MoveState, MoveState]]:
        log = np.empty((self.n_moves, 3), dtype=np.int64)
        count = bank_migrate(
            self.heaps, self.pos, self.dkeys, self.tkeys, self.sizes, self.tags,
            current_iter, aspiration, log,
        )
        return [(int(h), MoveState(int(a)), MoveState(int(b))) for h, a, b in log[:count]]

    def reset_to_ineligible(self, move: int, new_eligible_iter: int) -> None:
        bank_reset(self.heaps, self.pos, self.dkeys, self.tkeys, self.sizes, self.tags, move, new_eligible_iter)

    def update_delta(self, move: int, value: int) -> None:
        self.dkeys[move, 0] = value
        self.push(np.array([move], dtype=np.int64))

    def push(self, moves: np.ndarray) -> None:
        moves = np.ascontiguousarray(moves, dtype=np.int64)
        bank_push(self.heaps, self.pos, self.dkeys, self.tags, moves, moves.shape[0])

    def best_in(self, queue: int) -> int | None:
        heap, pos, stored, true = self._arrays(queue)
        h = q_peek(heap, pos, stored, self.sizes, queue, true)
        return None if h < 0 else int(h)

    def members(self, queue: int) -> np.ndarray:
        return np.sort(self.heaps[queue, : self.sizes[queue], 1])

    def check_invariants(self, current_iter: int | None = None, aspiration: int | None = None) -> list[str]:
        """Partition and tag consistency; with ``current_iter`` also checks tags against states."""
        problems = []
        m = self.n_moves
        seen = np.zeros(m, dtype=np.int64)
        for tag in range(3):
            mem = self.members(2 + tag)
            seen[mem] += 1
            if (self.tags[mem] != tag).any():
                problems.append(f"delta queue {2 + tag} holds moves tagged otherwise")
        if (seen != 1).any():
            problems.append(f"delta queues do not partition the moves ({int((seen != 1).sum())} misplaced)")
        for tag in range(2):
            if not np.array_equal(self.members(tag), np.nonzero(self.tags == tag)[0]):
                problems.append(f"tabu queue {tag} membership disagrees with tags")
        if (self.pos[0][self.tags == 2] != -1).any():
            problems.append("aspired move still positioned in a tabu queue")
        for q in range(N_QUEUES):
            heap, pos, stored, true = self._arrays(q)
            problems += _check_heap(heap[: self.sizes[q]], pos, stored, true, label=f"queue {q}")
        if current_iter is not None:
            bad = np.nonzero(_states(current_iter, self.elig, aspiration) != self.tags)[0]
            if bad.size:
                problems.append(f"{bad.size} moves tagged with the wrong state, first {int(bad[0])}")
        return problems


def _states(current_iter, elig, aspiration):
    return np.where(
        current_iter <= elig, 0, np.where(current_iter - aspiration > elig, 2, 1)
    ).astype(np.int8)
