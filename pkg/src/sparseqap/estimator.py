"""scikit-learn style front end for the tabu search engines."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .delta import Permutation, total_cost
from .exceptions import InvalidConfigError, UnsupportedInstanceError
from .instance import QapInstance, check_supported
from .solver import ENGINES, SolverParams, run


def check_instance(X, name: str = "") -> QapInstance:
    """Coerce ``X`` into a validated :class:`QapInstance`.

    Accepts an instance, or a ``(flow, dist)`` pair of square integer arrays.
    """
    if isinstance(X, QapInstance):
        return check_supported(X)
    if isinstance(X, tuple) and len(X) == 2:
        flow, dist = (np.asarray(a) for a in X)
        for label, arr in (("flow", flow), ("dist", dist)):
            if arr.dtype.kind not in "iub":
                if arr.dtype.kind != "f" or not np.array_equal(arr, np.round(arr)):
                    raise UnsupportedInstanceError(f"{label} must hold integers, got dtype {arr.dtype}")
        return check_supported(QapInstance(flow, dist, name=name))
    raise UnsupportedInstanceError(
        f"expected a QapInstance or a (flow, dist) pair, got {type(X).__name__}"
    )


class RobustTabuSearch(BaseEstimator):
    """Robust tabu search over pairwise swaps.

    Parameters mirror :class:`~sparseqap.solver.SolverParams`; ``None`` for
    a tenure bound or the aspiration picks the size-dependent default.

    Attributes set by :meth:`fit`: ``best_cost_``, ``best_permutation_``
    (location of each facility), ``initial_cost_``, ``trace_`` (one row per
    move, columns as in ``TRACE_FIELDS``), ``n_iter_`` and ``phase_seconds_``.
    """

    def __init__(
        self,
        engine="sparse",
        iterations=10_000,
        random_state=0,
        tenure_min=None,
        tenure_max=None,
        aspiration=None,
        init="random",
        debug=False,
    ):
        self.engine = engine
        self.iterations = iterations
        self.random_state = random_state
        self.tenure_min = tenure_min
        self.tenure_max = tenure_max
        self.aspiration = aspiration
        self.init = init
        self.debug = debug

    def _solver_params(self) -> SolverParams:
        if self.engine not in ENGINES:
            raise InvalidConfigError(f"unknown engine {self.engine!r}; choose from {sorted(ENGINES)}")
        seed = self.random_state
        if seed is None:
            seed = 0
        elif not isinstance(seed, (int, np.integer)):
            raise InvalidConfigError("random_state must be an integer seed")
        return SolverParams(
            iterations=int(self.iterations),
            seed=int(seed),
            tenure_min=self.tenure_min,
            tenure_max=self.tenure_max,
            aspiration=self.aspiration,
            initial_permutation=self.init,
            debug=self.debug,
        )

    def fit(self, X, y=None):
        inst = check_instance(X)
        result = run(inst, self._solver_params(), self.engine)
        self.instance_ = inst
        self.params_ = result.params
        self.best_cost_ = result.best_cost
        self.best_permutation_ = result.best_permutation
        self.initial_cost_ = result.initial_cost
        self.trace_ = result.trace_array
        self.n_iter_ = result.iterations
        self.phase_seconds_ = result.phase_seconds
        self.result_ = result
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).best_permutation_

    def score(self, X, y=None) -> float:
        """Negated cost of the fitted assignment on ``X`` (higher is better)."""
        check_is_fitted(self, "best_permutation_")
        inst = check_instance(X)
        if inst.n != self.best_permutation_.shape[0]:
            raise ValueError(f"fitted on n={self.best_permutation_.shape[0]}, got n={inst.n}")
        return -float(total_cost(inst, Permutation.from_locations(self.best_permutation_)))
