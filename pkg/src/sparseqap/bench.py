"""Timing experiments: per-iteration cost versus size and degree, queue time share.

Every measurement runs a fresh engine without debug checks, discards the
first 10% of its iterations as warm-up and divides the wall time of the rest
by their count. Repeated seeds are summarized by their median.
"""
from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .exceptions import InstrumentationError, InsufficientPointsError, InvalidConfigError
from .instance import GeneratorConfig, QapInstance, generate_instance
from .solver import SolverParams, make_engine

CSV_COLUMNS = ("n", "k", "engine", "seed", "iterations", "sec_per_iter", "pq_fraction")
WARMUP_FRACTION = 0.1


@dataclass(frozen=True)
class BenchPoint:
    n: int
    k: int
    engine: str
    seed: int
    iterations: int
    sec_per_iter: float
    pq_fraction: float | None = None

    def row(self) -> list:
        pq = "" if self.pq_fraction is None else f"{self.pq_fraction:.6f}"
        return [self.n, self.k, self.engine, self.seed, self.iterations, f"{self.sec_per_iter:.9g}", pq]


def measure(
    inst: QapInstance,
    engine: str,
    iterations: int,
    seed: int = 0,
    *,
    k: int | None = None,
    params: SolverParams | None = None,
    warmup_fraction: float = WARMUP_FRACTION,
) -> BenchPoint:
    """Time one engine on one instance.

    ``iterations`` counts the measured steps; ``warmup_fraction`` of them is
    run first and discarded.
    """
    params = params or SolverParams(seed=seed)
    if params.debug:
        # audits dominate the step cost and would swamp the measurement
        raise InvalidConfigError("timing runs must not use debug mode")
    if iterations < 1:
        raise InvalidConfigError("need at least one timed iteration")
    eng = make_engine(inst, params, engine)
    assert not eng.params.debug
    warmup = int(math.ceil(iterations * warmup_fraction))
    if warmup:
        eng.run(warmup)
    eng.cyc[:] = 0
    t0 = time.perf_counter()
    eng.run(iterations)
    wall = time.perf_counter() - t0
    pq = None
    if engine == "sparse" and eng.params.instrument:
        pq = _queue_share(eng.cyc)
    if k is None:
        k = int(round(inst.mean_degree))
    return BenchPoint(inst.n, k, eng.name, seed, iterations, wall / iterations, pq)


def _queue_share(cyc: np.ndarray) -> float:
    from .solver import PHASES

    total = cyc[PHASES.index("total")]
    if total <= 0:
        return 0.0
    return float(min(max(cyc[PHASES.index("queue_ops")] / total, 0.0), 1.0))


def fit_loglog(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    if len(set(xs)) < 3:
        raise InsufficientPointsError(f"need at least 3 distinct sizes for a slope, got {sorted(set(xs))}")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


def fit_linear(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Least-squares (slope, intercept) of y against x."""
    if len(set(xs)) < 2:
        raise InsufficientPointsError("need at least 2 distinct x values for a line")
    slope, intercept = np.polyfit(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), 1)
    return float(slope), float(intercept)


def medians(points: Iterable[BenchPoint], by: str = "n") -> dict[tuple[str, int], float]:
    """Median seconds per iteration for each (engine, ``by``) group."""
    groups: dict[tuple[str, int], list[float]] = {}
    for pt in points:
        groups.setdefault((pt.engine, getattr(pt, by)), []).append(pt.sec_per_iter)
    return {key: statistics.median(v) for key, v in sorted(groups.items())}


@dataclass
class ScalingReport:
    points: list[BenchPoint]
    slopes: dict[str, float]
    ratio_slope: float
    median_times: dict[tuple[str, int], float] = field(default_factory=dict)

    @classmethod
    def from_points(cls, points: list[BenchPoint]) -> "ScalingReport":
        med = medians(points)
        slopes = {}
        for engine in ("dense", "sparse"):
            ns = [n for (e, n) in med if e == engine]
            slopes[engine] = fit_loglog(ns, [med[engine, n] for n in ns])
        # the log of a ratio is a difference of logs, so the fits subtract
        return cls(points, slopes, slopes["dense"] - slopes["sparse"], med)

    def ratios(self) -> dict[int, float]:
        ns = sorted({n for _, n in self.median_times})
        return {n: self.median_times["dense", n] / self.median_times["sparse", n] for n in ns}

    def summary(self) -> str:
        lines = [f"slope dense {self.slopes['dense']:.3f}, sparse {self.slopes['sparse']:.3f}, "
                 f"ratio {self.ratio_slope:.3f}"]
        for n, ratio in self.ratios().items():
            lines.append(
                f"  n={n}: dense {self.median_times['dense', n] * 1e6:.1f} us/iter, "
                f"sparse {self.median_times['sparse', n] * 1e6:.1f} us/iter, ratio {ratio:.2f}"
            )
        return "\n".join(lines)


def bench_scaling(
    n_list: Sequence[int],
    k: int = 3,
    iterations: int = 10_000,
    seeds: Sequence[int] = (0, 1, 2),
    *,
    progress=None,
) -> ScalingReport:
    """Both engines on one generated instance per (n, seed); fits slopes on median times."""
    if len(set(n_list)) < 3:
        raise InsufficientPointsError(f"need at least 3 sizes, got {list(n_list)}")
    if list(n_list) != sorted(n_list):
        raise InvalidConfigError("n_list must be ascending")
    points = []
    for n in n_list:
        for seed in seeds:
            inst = generate_instance(GeneratorConfig(n, k, seed=seed))
            for engine in ("dense", "sparse"):
                pt = measure(inst, engine, iterations, seed, k=k)
                points.append(pt)
                if progress:
                    progress(pt)
    return ScalingReport.from_points(points)


def bench_degree(
    n: int,
    k_list: Sequence[int],
    iterations: int = 10_000,
    seeds: Sequence[int] = (0, 1, 2),
    *,
    progress=None,
) -> list[BenchPoint]:
    """Sparse engine timings across flow-graph degrees at a fixed size."""
    for k in k_list:
        GeneratorConfig(n, k).check()
    points = []
    for k in k_list:
        for seed in seeds:
            inst = generate_instance(GeneratorConfig(n, k, seed=seed))
            pt = measure(inst, "sparse", iterations, seed, k=k)
            points.append(pt)
            if progress:
                progress(pt)
    return points


def degree_fit(points: Sequence[BenchPoint]) -> tuple[float, float, dict[int, float]]:
    """Line through median time against k; returns (slope, intercept, relative residual per k)."""
    med = {k: t for (_, k), t in medians(points, by="k").items()}
    ks = sorted(med)
    slope, intercept = fit_linear(ks, [med[k] for k in ks])
    resid = {}
    for k in ks:
        fit = slope * k + intercept
        resid[k] = (med[k] - fit) / fit
    return slope, intercept, resid


def report_pq_share(n: int, k: int = 3, iterations: int = 10_000, seed: int = 0, *, instrument: bool = True) -> float:
    """Fraction of sparse-engine step time spent updating the priority queues."""
    if not instrument:
        raise InstrumentationError("queue time share needs an instrumented run (instrument=True)")
    inst = generate_instance(GeneratorConfig(n, k, seed=seed))
    pt = measure(inst, "sparse", iterations, seed, k=k, params=SolverParams(seed=seed, instrument=True))
    return pt.pq_fraction


def write_csv(points: Iterable[BenchPoint], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for pt in points:
        writer.writerow(pt.row())


def read_csv(stream: TextIO) -> list[BenchPoint]:
    out = []
    for row in csv.DictReader(stream):
        out.append(BenchPoint(
            int(row["n"]), int(row["k"]), row["engine"], int(row["seed"]), int(row["iterations"]),
            float(row["sec_per_iter"]), float(row["pq_fraction"]) if row["pq_fraction"] else None,
        ))
    return out
