"""Robust tabu search for the quadratic assignment problem on sparse flow graphs.

Two engines share one random source and tie-breaking order: a dense engine
that rescans every move each iteration, and a sparse engine that keeps moves
in lazily repaired priority queues and only updates the deltas a swap can
change. Given the same inputs they produce identical move sequences.
"""
from .delta import (
    DeltaTable, MoveId, Permutation, apply_swap, delta_matrix, move_index, move_pair, n_moves,
    refresh_after_move, swap_delta_full, swap_delta_incremental, swap_delta_sparse, total_cost,
)
from .estimator import RobustTabuSearch, check_instance
from .exceptions import (
    InstrumentationError, InsufficientPointsError, InvalidConfigError, MalformedFileError, QapError,
    UnsupportedInstanceError,
)
from .instance import (
    GeneratorConfig, QapInstance, generate_instance, grid_distances, parse_qaplib, sparsity, validate,
    write_qaplib,
)
from .queues import LazyIndexedQueue, MoveState, QueueBank
from .solver import (
    DenseEngine, EquivalenceReport, MoveRecord, RunResult, SolverParams, SparseEngine, make_engine, run,
    verify_equivalence,
)

__version__ = "0.1.0"
