import numpy as np
import pytest

from oracles import brute_optimum, random_instance
from sparseqap import _rng
from sparseqap.delta import MoveId, _refresh_dense, move_index, total_cost
from sparseqap.exceptions import InstrumentationError, InvalidConfigError, UnsupportedInstanceError
from sparseqap.instance import GeneratorConfig, QapInstance, generate_instance
from sparseqap.queues import QueueBank
from sparseqap.solver import (
    RULE_NAMES, TRACE_FIELDS, DebugAssertionError, DenseEngine, MoveRecord, SolverParams, SparseEngine,
    _apply_move, make_engine, run, verify_equivalence,
)

ENGINES = [DenseEngine, SparseEngine]


@pytest.fixture(scope="module")
def inst100():
    return generate_instance(GeneratorConfig(100, 3, seed=1))


def load_state(engine, deltas, elig, current_iter, cost, best):
    """Overwrite the selection-relevant state of an engine."""
    engine.scal[:] = (current_iter, cost, best)
    if isinstance(engine, SparseEngine):
        engine.bank = QueueBank.from_state(
            np.asarray(deltas, dtype=np.int64), np.asarray(elig, dtype=np.int64),
            current_iter, engine.params.aspiration,
        )
        engine.deltas, engine.elig = engine.bank.deltas, engine.bank.elig
    else:
        engine.deltas[:] = deltas
        engine.elig[:] = elig


def small_engine(cls):
    inst = QapInstance(np.zeros((5, 5)), np.zeros((5, 5)))
    return cls(inst, SolverParams(tenure_min=2, tenure_max=3, aspiration=10))


# ---------------------------------------------------------------- selection rules


@pytest.mark.parametrize("cls", ENGINES)
def test_rule1_overrides_tabu(cls):
    eng = small_engine(cls)
    deltas = np.full(10, 4)
    deltas[move_index(1, 3)] = -5
    elig = np.zeros(10, dtype=int)
    elig[move_index(1, 3)] = 50  # ineligible at t=20
    load_state(eng, deltas, elig, 20, 100, 100)
    assert eng.select_move() == (MoveId(1, 3), "rule1")


@pytest.mark.parametrize("cls", ENGINES)
def test_aspired_beats_better_authorized(cls):
    eng = small_engine(cls)
    # t=20, A=10: elig < 10 aspired, 10..19 authorized, >= 20 ineligible
    elig = np.full(10, 15)
    deltas = np.full(10, 20)
    deltas[move_index(0, 4)] = -5
    asp = move_index(2, 3)
    deltas[asp], elig[asp] = 7, 3
    load_state(eng, deltas, elig, 20, 100, 90)
    assert eng.select_move() == (MoveId(2, 3), "rule2")


@pytest.mark.parametrize("cls", ENGINES)
def test_authorized_tie_breaks_by_index(cls):
    eng = small_engine(cls)
    elig = np.full(10, 15)
    deltas = np.full(10, 9)
    deltas[move_index(1, 4)] = 3
    deltas[move_index(0, 2)] = 3
    load_state(eng, deltas, elig, 20, 100, 50)
    assert move_index(0, 2) < move_index(1, 4)
    assert eng.select_move() == (MoveId(0, 2), "rule3")


@pytest.mark.parametrize("cls", ENGINES)
def test_fallback_takes_soonest_eligible(cls):
    eng = small_engine(cls)
    elig = np.arange(30, 40)
    elig[move_index(2, 4)] = 25
    elig[move_index(0, 4)] = 25
    deltas = np.arange(10) + 1
    load_state(eng, deltas, elig, 20, 100, 50)
    assert eng.select_move() == (MoveId(0, 4), "fallback")


def test_select_is_side_effect_free(inst100):
    a = SparseEngine(inst100, SolverParams(seed=2))
    a.run(50)
    first = a.select_move()
    assert a.select_move() == first
    b = DenseEngine(inst100, SolverParams(seed=2))
    b.run(50)
    assert b.select_move() == first
    assert MoveId(a.step().r, a.step().s) is not None


# ---------------------------------------------------------------- steps and runs


@pytest.mark.parametrize("cls", ENGINES)
def test_zero_flow_step(cls):
    inst = QapInstance(np.zeros((6, 6)), np.ones((6, 6)) - np.eye(6))
    eng = cls(inst, SolverParams(initial_permutation="identity"))
    assert eng.current_cost == 0 and (eng.deltas == 0).all()
    rec = eng.step()
    assert rec.delta == 0 and rec.cost_after == 0 and rec.iter == 1


@pytest.mark.parametrize("engine", ["dense", "sparse"])
def test_zero_iterations(inst100, engine):
    res = run(inst100, SolverParams(iterations=0, seed=4), engine)
    assert res.best_cost == res.initial_cost
    assert res.trace == [] and res.iterations == 0


@pytest.mark.parametrize("cls", ENGINES)
def test_same_seed_same_state(cls, inst100):
    a, b = cls(inst100, SolverParams(seed=9)), cls(inst100, SolverParams(seed=9))
    assert (a.p == b.p).all() and (a.deltas == b.deltas).all()
    a.run(200)
    b.run(200)
    assert (a.trace_array == b.trace_array).all()


@pytest.mark.parametrize("cls", ENGINES)
def test_costs_follow_trace(cls):
    inst = generate_instance(GeneratorConfig(30, 3, seed=3))
    eng = cls(inst, SolverParams(seed=1, debug=True))
    eng.run(300)
    trace = eng.trace
    cost = eng.initial_cost
    best = cost
    for rec in trace:
        assert rec.cost_after == cost + rec.delta
        cost = rec.cost_after
        best = min(best, cost)
    assert eng.best_cost == best == total_cost(inst, eng.best_p)
    assert eng.current_cost == total_cost(inst, eng.p)


def test_best_cost_is_nonincreasing():
    inst = generate_instance(GeneratorConfig(30, 3, seed=8))
    res = run(inst, SolverParams(iterations=1000, seed=8), "dense")
    running = np.minimum.accumulate(np.concatenate([[res.initial_cost], res.trace_array[:, 5]]))
    assert (np.diff(running) <= 0).all()
    assert running[-1] == res.best_cost


@pytest.mark.parametrize("cls", ENGINES)
def test_tenure_draws_in_range(cls):
    inst = generate_instance(GeneratorConfig(40, 3, seed=0))
    eng = cls(inst, SolverParams(seed=5))
    eng.run(400)
    ten = eng.trace_array[:, 6]
    assert ten.min() >= 36 and ten.max() <= 44


def test_tabu_discipline(inst100):
    eng = SparseEngine(inst100, SolverParams(seed=3, tenure_min=60, tenure_max=90))
    eng.run(3000)
    last_release = {}
    for rec in eng.trace:
        key = (rec.r, rec.s)
        if key in last_release and rec.iter <= last_release[key]:
            assert rec.rule in ("rule1", "fallback")
        last_release[key] = rec.iter + rec.tenure_drawn


@pytest.mark.parametrize("init, shuffle_draws", [("random", 99), ("identity", 0)])
@pytest.mark.parametrize("cls", ENGINES)
def test_rng_draw_count(cls, init, shuffle_draws, inst100):
    seed = 77
    eng = cls(inst100, SolverParams(seed=seed, initial_permutation=init))
    eng.run(250)
    golden = 0x9E3779B97F4A7C15
    expect = (seed + golden * (shuffle_draws + 250)) % 2**64
    assert int(eng.rng[0]) == expect


def test_random_start_uses_shared_shuffle(inst100):
    p = np.arange(100)
    _rng.shuffle_inplace(_rng.new_state(12), p)
    assert (DenseEngine(inst100, SolverParams(seed=12)).p == p).all()
    assert (SparseEngine(inst100, SolverParams(seed=12)).p == p).all()


# ---------------------------------------------------------------- equivalence


@pytest.mark.parametrize("seed", range(4))
def test_traces_identical_generated(seed, inst100):
    params = SolverParams(iterations=3000, seed=seed)
    a, b = run(inst100, params, "dense"), run(inst100, params, "sparse")
    assert (a.trace_array == b.trace_array).all()
    assert a.best_cost == b.best_cost and (a.best_permutation == b.best_permutation).all()


@pytest.mark.parametrize("density", [0.05, 0.3, 1.0])
def test_traces_identical_weighted(density):
    rng = np.random.default_rng(int(density * 100))
    inst = random_instance(rng, 40, density=density, max_flow=20, max_dist=100)
    params = SolverParams(iterations=2000, seed=5)
    a, b = run(inst, params, "dense"), run(inst, params, "sparse")
    assert (a.trace_array == b.trace_array).all()


def test_all_rules_exercised():
    rules = set()
    # long tenures on a 15-move instance exhaust the eligible moves; a short
    # aspiration on a larger one ages moves into the aspired state
    for n, tmin, tmax, asp in ((6, 14, 20, 24), (8, 5, 8, 12)):
        inst = generate_instance(GeneratorConfig(n, 3, seed=2))
        params = SolverParams(iterations=2000, seed=1, tenure_min=tmin, tenure_max=tmax, aspiration=asp)
        a, b = run(inst, params, "dense"), run(inst, params, "sparse")
        assert (a.trace_array == b.trace_array).all()
        rules |= set(np.unique(a.trace_array[:, 4]).tolist())
    assert rules == set(RULE_NAMES)


def test_verify_equivalence_debug(inst100):
    rep = verify_equivalence(inst100, SolverParams(iterations=150, seed=2, debug=True))
    assert rep.identical, rep.divergence
    assert "identical" in str(rep)


class BrokenTiebreak(DenseEngine):
    """Dense engine that prefers the largest index among equal candidates."""

    def _select(self):
        t, a = self.current_iter, self.params.aspiration
        d, e = self.deltas, self.elig
        idx = np.arange(d.shape[0])
        inel, asp = t <= e, t - a > e

        def argmin(mask, key):
            cand = idx[mask]
            return int(cand[np.lexsort((-cand, key[cand]))[0]]) if cand.size else -1

        g = argmin(np.ones_like(inel), d)
        if self.current_cost + d[g] < self.best_cost:
            return np.array([g, 1])
        for mask, rule in ((asp, 2), (~inel & ~asp, 3)):
            if mask.any():
                return np.array([argmin(mask, d), rule])
        return np.array([argmin(inel, e), 4])

    def _run(self, rec):
        pr = self.params
        for i in range(rec.shape[0]):
            g, rule = self._select()
            r, s = _apply_move(self.p, self.q, self.deltas, self.elig, self.rng, self.scal, self.best_p,
                               pr.tenure_min, pr.tenure_max, g, rule, rec[i])
            _refresh_dense(self.inst.flow, self.inst.dist, self.p, self.deltas, r, s, self._coef, self._edist)


class SkipsNeighbourUpdates(SparseEngine):
    """Sparse engine that drops every delta change for moves not meeting the swapped pair."""

    def _run(self, rec):
        for i in range(rec.shape[0]):
            before = self.deltas.copy()
            super()._run(rec[i : i + 1])
            r, s = int(rec[i, 1]), int(rec[i, 2])
            changed = np.nonzero(before != self.deltas)[0]
            keep = [m for m in changed if not {r, s} & set(_pair(m))]
            self.deltas[keep] = before[keep]
            self.bank.push(np.asarray(keep, dtype=np.int64))


def _pair(m):
    return MoveId.from_index(int(m))


def first_tie_iteration(inst, params, limit):
    eng = DenseEngine(inst, params)
    for _ in range(limit):
        t = eng.current_iter
        move, rule = eng.select_move()
        d, e = eng.deltas, eng.elig
        if rule == "fallback":
            tied = (e == e[move.index]) & (t <= e)
        else:
            mask = {"rule1": np.ones(d.shape, bool), "rule2": t - eng.params.aspiration > e,
                    "rule3": (t > e) & (t - eng.params.aspiration <= e)}[rule]
            tied = mask & (d == d[move.index])
        if tied.sum() > 1:
            return t
        eng.step()
    return None


def test_broken_tiebreak_diverges_at_first_tie():
    inst = generate_instance(GeneratorConfig(30, 3, seed=6))
    params = SolverParams(iterations=500, seed=1)
    rep = verify_equivalence(inst, params, engines=(DenseEngine, BrokenTiebreak))
    assert not rep.identical
    assert rep.divergence["reason"] == "selected moves differ"
    assert rep.divergence["iteration"] == first_tie_iteration(inst, params, 500)


def test_skipped_neighbour_updates_reported_with_delta_details():
    inst = generate_instance(GeneratorConfig(30, 3, seed=6))
    rep = verify_equivalence(inst, SolverParams(iterations=500, seed=1), engines=(DenseEngine, SkipsNeighbourUpdates))
    assert not rep.identical
    div = rep.divergence
    assert div["delta_mismatches"] > 0
    assert div["first_delta_mismatches"]
    assert set(div["candidates_a"]) == {"global", "aspired", "authorized", "ineligible"}


# ---------------------------------------------------------------- instrumentation and audits


def test_touched_bounds(inst100):
    eng = SparseEngine(inst100, SolverParams(seed=0))
    eng.run(400)
    adj = [set(j for j, _ in row) for row in inst100.adjacency]
    n = 100
    for rec, touched in zip(eng.trace, eng.touched):
        union = adj[rec.r] | adj[rec.s]
        assert touched <= 2 * (n - 1) + (n - 1) * len(union)


def test_zero_flow_touches_only_swapped_pair():
    n = 12
    inst = QapInstance(np.zeros((n, n)), np.ones((n, n)) - np.eye(n))
    eng = SparseEngine(inst, SolverParams(seed=0))
    eng.run(30)
    assert (eng.touched == 2 * (n - 1) - 1).all()


@pytest.mark.parametrize("cls", ENGINES)
def test_debug_mode_catches_corruption(cls, inst100):
    eng = cls(inst100, SolverParams(seed=0, debug=True))
    eng.run(3)
    eng.deltas[17] += 1
    if isinstance(eng, SparseEngine):
        eng.bank.push(np.array([17]))
    with pytest.raises(DebugAssertionError, match="stale delta"):
        eng.run(1)


def test_phase_seconds(inst100):
    res = run(inst100, SolverParams(iterations=300, seed=0), "sparse")
    ph = res.phase_seconds
    assert ph["total"] > 0
    assert ph["selection"] + ph["delta_update"] + ph["queue_ops"] <= ph["total"] * 1.001
    eng = make_engine(inst100, SolverParams(instrument=False), "sparse")
    with pytest.raises(InstrumentationError):
        eng.phase_seconds()


def test_report_schema(inst100):
    rep = run(inst100, SolverParams(iterations=20, seed=0), "dense").to_report("t.csv")
    assert set(rep) == {
        "schema_version", "instance", "engine", "params", "initial_cost", "best_cost", "best_permutation",
        "iterations", "wall_seconds", "phase_seconds", "trace_path",
    }
    assert set(rep["phase_seconds"]) == {"selection", "delta_update", "queue_ops"}
    assert rep["params"]["aspiration"] == 5 * 100 * 100


def test_move_record_fields():
    rec = MoveRecord.from_row([3, 1, 4, -9, 2, 100, 7])
    assert tuple(getattr(rec, f) for f in TRACE_FIELDS) == (3, 1, 4, -9, "rule2", 100, 7)


# ---------------------------------------------------------------- parameters


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(tenure_min=5, tenure_max=4),
        dict(tenure_min=0),
        dict(tenure_max=20, aspiration=20),
        dict(iterations=-1),
        dict(initial_permutation="greedy"),
    ],
)
def test_bad_params(kwargs, inst100):
    with pytest.raises(InvalidConfigError):
        SparseEngine(inst100, SolverParams(**kwargs))


def test_default_params():
    p = SolverParams().resolved(50)
    assert (p.tenure_min, p.tenure_max, p.aspiration) == (45, 55, 12500)


def test_rejects_tiny_and_invalid_instances():
    with pytest.raises(InvalidConfigError):
        DenseEngine(QapInstance(np.zeros((1, 1)), np.zeros((1, 1))))
    with pytest.raises(UnsupportedInstanceError):
        DenseEngine(QapInstance([[0, 1], [2, 0]], [[0, 1], [1, 0]]))
    with pytest.raises(InvalidConfigError):
        make_engine(generate_instance(GeneratorConfig(4, 3)), engine="quantum")


def test_dense_finds_optimum_small():
    rng = np.random.default_rng(3)
    hits = 0
    for seed in range(4):
        inst = random_instance(rng, 6, density=0.6)
        res = run(inst, SolverParams(iterations=2000, seed=seed), "dense")
        hits += res.best_cost == brute_optimum(inst.flow, inst.dist)
    assert hits == 4
