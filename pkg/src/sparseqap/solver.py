"""Robust tabu search for QAP with two interchangeable engines.

``DenseEngine`` scans all n(n-1)/2 moves per iteration and updates the whole
delta table, O(n^2) per iteration. ``SparseEngine`` keeps the moves in a
:class:`~sparseqap.queues.QueueBank` and only touches moves whose delta can
change, O(n * mean degree) per iteration for sparse flows.

Both engines consume the same random draws in the same order and break every
tie by move index, so for equal inputs they produce identical traces.

Iterations are numbered from 1. A move is ineligible while
``iteration <= eligible_iter``, aspired once ``iteration - aspiration >
eligible_iter``, and authorized in between. Selection rules, in order:

1. the globally best move if it yields a new best cost (rule 1);
2. the best aspired move (rule 2);
3. the best authorized move (rule 3);
4. otherwise the ineligible move that becomes eligible soonest (fallback).
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import ClassVar

import numpy as np
from numba import njit

from . import _rng
from ._cycles import cycles, cycles_per_second
from .delta import (
    WORK_ROWS, MoveId, Permutation, _local_costs, _pair, _refresh_dense, _refresh_sparse,
    _table_full, _table_sparse, delta_matrix, move_pair, n_moves, table_from_matrix, total_cost,
)
from .exceptions import InstrumentationError, InvalidConfigError
from .instance import QapInstance, check_supported
from .queues import (
    ASPIRED_DELTA, AUTHORIZED_DELTA, INELIGIBLE_DELTA, INELIGIBLE_TABU, QueueBank,
    bank_migrate, bank_push, bank_reset, bank_select,
)

RULE_NAMES = {1: "rule1", 2: "rule2", 3: "rule3", 4: "fallback"}
TRACE_FIELDS = ("iter", "r", "s", "delta", "rule", "cost_after", "tenure_drawn")

# scalar slots
_ITER, _COST, _BEST = 0, 1, 2
# cycle-counter phases
PHASES = ("selection", "delta_update", "queue_ops", "total")
_SEL, _DELTA, _QUEUE, _TOTAL = 0, 1, 2, 3


class DebugAssertionError(AssertionError):
    """A debug-mode audit found the solver state inconsistent."""


@dataclass(frozen=True)
class SolverParams:
    iterations: int = 10_000
    seed: int = 0
    tenure_min: int | None = None
    tenure_max: int | None = None
    aspiration: int | None = None
    initial_permutation: str = "random"
    debug: bool = False
    instrument: bool = True

    def resolved(self, n: int) -> "SolverParams":
        """Fill defaults that depend on the instance size and check consistency."""
        params = replace(
            self,
            # floor(0.9 n) and ceil(1.1 n) in exact integer arithmetic
            tenure_min=9 * n // 10 if self.tenure_min is None else self.tenure_min,
            tenure_max=-(-11 * n // 10) if self.tenure_max is None else self.tenure_max,
            aspiration=5 * n * n if self.aspiration is None else self.aspiration,
        )
        params.check(n)
        return params

    def check(self, n: int) -> None:
        if n < 2:
            raise InvalidConfigError("need at least two facilities to have a move")
        if self.iterations < 0:
            raise InvalidConfigError("iterations must be nonnegative")
        if not 1 <= self.tenure_min <= self.tenure_max:
            raise InvalidConfigError(
                f"need 1 <= tenure_min <= tenure_max, got {self.tenure_min}, {self.tenure_max}"
            )
        if self.tenure_max - self.tenure_min + 1 >= 2**32:
            raise InvalidConfigError("tenure range too wide")
        if self.aspiration <= self.tenure_max:
            raise InvalidConfigError(
                f"aspiration ({self.aspiration}) must exceed tenure_max ({self.tenure_max})"
            )
        if self.initial_permutation not in ("random", "identity"):
            raise InvalidConfigError(f"unknown initial permutation {self.initial_permutation!r}")


@dataclass(frozen=True)
class MoveRecord:
    iter: int
    r: int
    s: int
    delta: int
    rule: str
    cost_after: int
    tenure_drawn: int

    @classmethod
    def from_row(cls, row) -> "MoveRecord":
        it, r, s, d, rule, cost, ten = (int(x) for x in row)
        return cls(it, r, s, d, RULE_NAMES[rule], cost, ten)


# ---------------------------------------------------------------- shared kernels


@njit(cache=True)
def _apply_move(p, q, deltas, elig, rng, scal, best_p, tmin, tmax, g, rule, rec):
    """Swap, draw tenure, mark tabu, update costs and write the trace row."""
    t = scal[_ITER]
    r, s = _pair(g)
    delta = deltas[g]
    lr = p[r]
    ls = p[s]
    p[r] = ls
    p[s] = lr
    q[ls] = r
    q[lr] = s
    tenure = tmin + _rng.below(rng, tmax - tmin + 1)
    elig[g] = t + tenure
    cost = scal[_COST] + delta
    scal[_COST] = cost
    if cost < scal[_BEST]:
        scal[_BEST] = cost
        best_p[:] = p
    scal[_ITER] = t + 1
    rec[0] = t
    rec[1] = r
    rec[2] = s
    rec[3] = delta
    rec[4] = rule
    rec[5] = cost
    rec[6] = tenure
    return r, s


@njit(cache=True)
def _dense_select(deltas, elig, t, aspiration, cost, best_cost, out):
    g = -1
    asp = -1
    auth = -1
    inel = -1
    m = deltas.shape[0]
    for i in range(m):
        d = deltas[i]
        e = elig[i]
        # strict comparisons on ascending i give the smallest-index tiebreak
        if g < 0 or d < deltas[g]:
            g = i
        if t <= e:
            if inel < 0 or e < elig[inel]:
                inel = i
        elif t - aspiration > e:
            if asp < 0 or d < deltas[asp]:
                asp = i
        else:
            if auth < 0 or d < deltas[auth]:
                auth = i
    if g < 0:
        out[0] = -1
        out[1] = 0
    elif cost + deltas[g] < best_cost:
        out[0] = g
        out[1] = 1
    elif asp >= 0:
        out[0] = asp
        out[1] = 2
    elif auth >= 0:
        out[0] = auth
        out[1] = 3
    else:
        out[0] = inel
        out[1] = 4


@njit(cache=True)
def _dense_run(F, D, p, q, deltas, elig, rng, scal, best_p, tmin, tmax, aspiration,
               n_iter, rec, cyc, coef, edist, instrument):
    sel = np.empty(2, dtype=np.int64)
    for it in range(n_iter):
        c0 = cycles() if instrument else 0
        _dense_select(deltas, elig, scal[_ITER], aspiration, scal[_COST], scal[_BEST], sel)
        c1 = cycles() if instrument else 0
        r, s = _apply_move(p, q, deltas, elig, rng, scal, best_p, tmin, tmax, sel[0], sel[1], rec[it])
        c2 = cycles() if instrument else 0
        _refresh_dense(F, D, p, deltas, r, s, coef, edist)
        if instrument:
            c3 = cycles()
            cyc[_SEL] += c1 - c0
            cyc[_DELTA] += c3 - c2
            cyc[_TOTAL] += c3 - c0


@njit(cache=True)
def _sparse_run(ptr, idx, w, D, p, q, dkeys, tkeys, tags, heaps, pos, sizes,
                rng, scal, best_p, tmin, tmax, aspiration, n_iter, rec, touched, cyc,
                local, work, nbl, changed, instrument):
    sel = np.empty(2, dtype=np.int64)
    nolog = np.empty((0, 3), dtype=np.int64)
    deltas = dkeys[:, 0]
    elig = tkeys[:, 0]
    for it in range(n_iter):
        t = scal[_ITER]
        c0 = cycles() if instrument else 0
        bank_migrate(heaps, pos, dkeys, tkeys, sizes, tags, t, aspiration, nolog)
        c1 = cycles() if instrument else 0
        bank_select(heaps, pos, dkeys, tkeys, sizes, scal[_COST], scal[_BEST], sel)
        c2 = cycles() if instrument else 0
        g = sel[0]
        r, s = _apply_move(p, q, deltas, elig, rng, scal, best_p, tmin, tmax, g, sel[1], rec[it])
        bank_reset(heaps, pos, dkeys, tkeys, sizes, tags, g, elig[g])
        c3 = cycles() if instrument else 0
        nc, nt = _refresh_sparse(ptr, idx, w, D, p, deltas, r, s, local, work, nbl, changed, True)
        touched[it] = nt
        c4 = cycles() if instrument else 0
        bank_push(heaps, pos, dkeys, tags, changed, nc)
        if instrument:
            c5 = cycles()
            cyc[_SEL] += c2 - c1
            cyc[_DELTA] += c4 - c3
            cyc[_QUEUE] += (c1 - c0) + (c3 - c2) + (c5 - c4)
            cyc[_TOTAL] += c5 - c0


# ---------------------------------------------------------------- engines


class _Engine:
    name: ClassVar[str]

    def __init__(self, inst: QapInstance, params: SolverParams | None = None):
        self.inst = check_supported(inst)
        self.params = (params or SolverParams()).resolved(inst.n)
        n = inst.n
        self.rng = _rng.new_state(self.params.seed)
        p = np.arange(n, dtype=np.int64)
        if self.params.initial_permutation == "random":
            _rng.shuffle_inplace(self.rng, p)
        self.p = p
        self.q = np.empty(n, dtype=np.int64)
        self.q[p] = np.arange(n)
        cost = total_cost(inst, p)
        self.initial_cost = cost
        self.scal = np.array([1, cost, cost], dtype=np.int64)
        self.best_p = p.copy()
        self.deltas = np.empty(n_moves(n), dtype=np.int64)
        self.elig = np.zeros(n_moves(n), dtype=np.int64)
        self.cyc = np.zeros(len(PHASES), dtype=np.int64)
        self._chunks: list[np.ndarray] = []

    # -- state views
    @property
    def current_iter(self) -> int:
        return int(self.scal[_ITER])

    @property
    def current_cost(self) -> int:
        return int(self.scal[_COST])

    @property
    def best_cost(self) -> int:
        return int(self.scal[_BEST])

    @property
    def permutation(self) -> Permutation:
        return Permutation(self.p.copy(), self.q.copy())

    @property
    def best_permutation(self) -> Permutation:
        return Permutation.from_locations(self.best_p)

    @property
    def trace_array(self) -> np.ndarray:
        if not self._chunks:
            return np.empty((0, len(TRACE_FIELDS)), dtype=np.int64)
        return np.concatenate(self._chunks)

    @property
    def trace(self) -> list[MoveRecord]:
        return [MoveRecord.from_row(row) for row in self.trace_array]

    # -- stepping
    def select_move(self) -> tuple[MoveId, str]:
        """The move the next step would make, without making it."""
        out = self._select()
        return MoveId.from_index(int(out[0])), RULE_NAMES[int(out[1])]

    def step(self) -> MoveRecord:
        return MoveRecord.from_row(self.run(1)[0])

    def run(self, iterations: int) -> np.ndarray:
        """Advance ``iterations`` steps; returns their trace rows."""
        rec = np.zeros((iterations, len(TRACE_FIELDS)), dtype=np.int64)
        if self.params.debug:
            for i in range(iterations):
                self._before_step_audit()
                self._run(rec[i : i + 1])
                problems = self.audit()
                if problems:
                    raise DebugAssertionError(
                        f"{self.name} engine, iteration {self.current_iter - 1}: " + "; ".join(problems)
                    )
        elif iterations:
            self._run(rec)
        self._chunks.append(rec)
        return rec

    def _before_step_audit(self):
        pass

    def audit(self) -> list[str]:
        """Exact from-scratch checks of cost, permutation and delta table."""
        problems = []
        if not np.array_equal(self.q[self.p], np.arange(self.inst.n)):
            problems.append("inverse permutation out of sync")
        cost = total_cost(self.inst, self.p)
        if cost != self.current_cost:
            problems.append(f"current cost {self.current_cost} != recomputed {cost}")
        if total_cost(self.inst, self.best_p) != self.best_cost:
            problems.append("best cost does not match best permutation")
        expect = table_from_matrix(delta_matrix(self.inst, self.p))
        bad = np.nonzero(expect != self.deltas)[0]
        if bad.size:
            m = int(bad[0])
            problems.append(
                f"{bad.size} stale delta entries, first {move_pair(m)}: {int(self.deltas[m])} != {int(expect[m])}"
            )
        return problems

    def candidates(self) -> dict[str, tuple[tuple[int, int], int] | None]:
        """Best move per category, computed by a direct scan of the state arrays."""
        t, a = self.current_iter, self.params.aspiration
        idx = np.arange(self.deltas.shape[0])
        inel = t <= self.elig
        asp = (t - a) > self.elig
        out = {}
        for label, mask, key in (
            ("global", np.ones_like(inel), self.deltas),
            ("aspired", asp, self.deltas),
            ("authorized", ~inel & ~asp, self.deltas),
            ("ineligible", inel, self.elig),
        ):
            if not mask.any():
                out[label] = None
                continue
            cand = idx[mask]
            best = cand[np.lexsort((cand, key[cand]))[0]]
            out[label] = (move_pair(int(best)), int(self.deltas[best]))
        return out

    # -- timing
    def phase_seconds(self) -> dict[str, float]:
        if not self.params.instrument:
            raise InstrumentationError("phase timings need a run with instrument=True")
        hz = cycles_per_second()
        if hz <= 0:
            raise InstrumentationError("no cycle counter available on this platform")
        return {name: float(self.cyc[i]) / hz for i, name in enumerate(PHASES)}


class DenseEngine(_Engine):
    """Full-scan reference engine."""

    name = "dense"

    def __init__(self, inst, params=None):
        super().__init__(inst, params)
        _table_full(self.inst.flow, self.inst.dist, self.p, self.deltas)
        self._coef = np.zeros(inst.n, dtype=np.int64)
        self._edist = np.zeros(inst.n, dtype=np.int64)

    def _select(self):
        out = np.empty(2, dtype=np.int64)
        _dense_select(self.deltas, self.elig, self.current_iter, self.params.aspiration,
                      self.current_cost, self.best_cost, out)
        return out

    def _run(self, rec):
        pr = self.params
        _dense_run(self.inst.flow, self.inst.dist, self.p, self.q, self.deltas, self.elig,
                   self.rng, self.scal, self.best_p, pr.tenure_min, pr.tenure_max, pr.aspiration,
                   rec.shape[0], rec, self.cyc, self._coef, self._edist, pr.instrument)


class SparseEngine(_Engine):
    """Priority-queue engine that only touches moves whose delta can change."""

    name = "sparse"

    def __init__(self, inst, params=None):
        super().__init__(inst, params)
        inst = self.inst
        _table_sparse(inst.adj_ptr, inst.adj_idx, inst.adj_w, inst.dist, self.p, self.deltas)
        self.bank = QueueBank.all_ineligible(self.deltas, self.elig)
        # from here on the bank owns the move arrays
        self.deltas = self.bank.deltas
        self.elig = self.bank.elig
        n = inst.n
        self._local = np.empty(n, dtype=np.int64)
        _local_costs(inst.adj_ptr, inst.adj_idx, inst.adj_w, inst.dist, self.p, self._local)
        self._work = np.zeros((WORK_ROWS, n), dtype=np.int64)
        max_deg = int(inst.degrees.max(initial=0))
        self._nbl = np.empty(max(2 * max_deg, 1), dtype=np.int64)
        self._changed = np.empty(2 * n + 1 + 2 * max_deg * n, dtype=np.int64)
        self._touched: list[np.ndarray] = []

    @property
    def touched(self) -> np.ndarray:
        """Delta entries evaluated per step (recomputed or incrementally corrected)."""
        if not self._touched:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self._touched)

    def migrate(self):
        return self.bank.migrate_states(self.current_iter, self.params.aspiration)

    def _select(self):
        self.migrate()
        b = self.bank
        out = np.empty(2, dtype=np.int64)
        bank_select(b.heaps, b.pos, b.dkeys, b.tkeys, b.sizes, self.current_cost, self.best_cost, out)
        return out

    def _run(self, rec):
        pr, inst, b = self.params, self.inst, self.bank
        touched = np.zeros(rec.shape[0], dtype=np.int64)
        _sparse_run(inst.adj_ptr, inst.adj_idx, inst.adj_w, inst.dist, self.p, self.q,
                    b.dkeys, b.tkeys, b.tags, b.heaps, b.pos, b.sizes,
                    self.rng, self.scal, self.best_p, pr.tenure_min, pr.tenure_max,
                    pr.aspiration, rec.shape[0], rec, touched, self.cyc,
                    self._local, self._work, self._nbl, self._changed, pr.instrument)
        self._touched.append(touched)

    def _before_step_audit(self):
        self.migrate()
        problems = self.bank.check_invariants(self.current_iter, self.params.aspiration)
        if problems:
            raise DebugAssertionError(f"sparse engine, iteration {self.current_iter}: " + "; ".join(problems))

    def audit(self):
        return super().audit() + self.bank.check_invariants()

    def candidates(self):
        """Best move per category as seen through the queue tops."""
        self.migrate()
        tops = {
            "aspired": self.bank.best_in(ASPIRED_DELTA),
            "authorized": self.bank.best_in(AUTHORIZED_DELTA),
            "ineligible": self.bank.best_in(INELIGIBLE_TABU),
        }
        inel_delta = self.bank.best_in(INELIGIBLE_DELTA)
        heads = [h for h in (tops["aspired"], tops["authorized"], inel_delta) if h is not None]
        tops["global"] = min(heads, key=lambda h: (self.deltas[h], h)) if heads else None
        return {
            label: None if h is None else (move_pair(h), int(self.deltas[h]))
            for label, h in tops.items()
        }


ENGINES: dict[str, type[_Engine]] = {"dense": DenseEngine, "sparse": SparseEngine}


def make_engine(inst: QapInstance, params: SolverParams | None = None, engine: str = "sparse") -> _Engine:
    try:
        cls = ENGINES[engine]
    except KeyError:
        raise InvalidConfigError(f"unknown engine {engine!r}; choose from {sorted(ENGINES)}") from None
    return cls(inst, params)


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    instance: str
    engine: str
    params: SolverParams
    initial_cost: int
    best_cost: int
    best_permutation: np.ndarray
    trace_array: np.ndarray
    wall_seconds: float
    phase_seconds: dict[str, float] | None = None
    touched: np.ndarray | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return int(self.trace_array.shape[0])

    @property
    def trace(self) -> list[MoveRecord]:
        return [MoveRecord.from_row(row) for row in self.trace_array]

    def to_report(self, trace_path: str | None = None) -> dict:
        report = {
            "schema_version": 1,
            "instance": self.instance,
            "engine": self.engine,
            "params": asdict(self.params),
            "initial_cost": self.initial_cost,
            "best_cost": self.best_cost,
            "best_permutation": [int(x) for x in self.best_permutation],
            "iterations": self.iterations,
            "wall_seconds": self.wall_seconds,
            "phase_seconds": {
                k: (self.phase_seconds or {}).get(k, 0.0) for k in ("selection", "delta_update", "queue_ops")
            },
        }
        if trace_path is not None:
            report["trace_path"] = trace_path
        return report


def run(inst: QapInstance, params: SolverParams | None = None, engine: str = "sparse") -> RunResult:
    """Run ``params.iterations`` steps of one engine from a fresh start."""
    eng = make_engine(inst, params, engine)
    t0 = time.perf_counter()
    eng.run(eng.params.iterations)
    wall = time.perf_counter() - t0
    return RunResult(
        instance=inst.name,
        engine=eng.name,
        params=eng.params,
        initial_cost=eng.initial_cost,
        best_cost=eng.best_cost,
        best_permutation=eng.best_p.copy(),
        trace_array=eng.trace_array,
        wall_seconds=wall,
        phase_seconds=eng.phase_seconds() if eng.params.instrument else None,
        touched=eng.touched if isinstance(eng, SparseEngine) else None,
    )


@dataclass
class EquivalenceReport:
    identical: bool
    iterations: int
    divergence: dict | None = None

    def __str__(self):
        if self.identical:
            return f"identical traces over {self.iterations} iterations"
        d = self.divergence
        return f"divergence at iteration {d['iteration']}: {d['reason']}"


def verify_equivalence(
    inst: QapInstance,
    params: SolverParams | None = None,
    engines: tuple[type[_Engine], type[_Engine]] = (DenseEngine, SparseEngine),
) -> EquivalenceReport:
    """Run two engines in lockstep and report the first step where they disagree."""
    a, b = (cls(inst, params) for cls in engines)
    n_iter = a.params.iterations
    if a.initial_cost != b.initial_cost or not np.array_equal(a.p, b.p):
        return EquivalenceReport(False, 0, {"iteration": 0, "reason": "different starting assignments"})
    for _ in range(n_iter):
        t = a.current_iter
        sel_a, sel_b = a.select_move(), b.select_move()
        if sel_a != sel_b:
            return EquivalenceReport(False, t - 1, _divergence(t, "selected moves differ", a, b, sel_a, sel_b))
        rec_a, rec_b = a.step(), b.step()
        if rec_a != rec_b:
            return EquivalenceReport(False, t - 1, _divergence(t, "move records differ", a, b, rec_a, rec_b))
    if a.best_cost != b.best_cost or not np.array_equal(a.best_p, b.best_p):
        return EquivalenceReport(False, n_iter, {"iteration": n_iter, "reason": "best solutions differ"})
    return EquivalenceReport(True, n_iter)


def _divergence(t, reason, a, b, what_a, what_b) -> dict:
    bad = np.nonzero(a.deltas != b.deltas)[0]
    return {
        "iteration": t,
        "reason": reason,
        "engine_a": a.name,
        "engine_b": b.name,
        "seen_a": str(what_a),
        "seen_b": str(what_b),
        "candidates_a": a.candidates(),
        "candidates_b": b.candidates(),
        "delta_mismatches": int(bad.size),
        "first_delta_mismatches": [
            (move_pair(int(m)), int(a.deltas[m]), int(b.deltas[m])) for m in bad[:5]
        ],
    }
