"""QAP instance model, file format, and random sparse instance generation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, TextIO

import networkx as nx
import numpy as np

from .exceptions import InvalidConfigError, MalformedFileError, UnsupportedInstanceError

# costs are accumulated in int64; keep headroom for the doubled delta formulas
_COST_LIMIT = 2**61


@dataclass(frozen=True, eq=False)
class QapInstance:
    """A symmetric, null-diagonal QAP instance with integer data.

    ``flow`` and ``dist`` are stored as read-only ``int64`` arrays. The flow
    graph is also kept in CSR form (``adj_ptr``, ``adj_idx``, ``adj_w``) for
    the sparse kernels; ``adjacency`` gives the same data as Python lists.
    """

    flow: np.ndarray
    dist: np.ndarray
    name: str = ""
    adj_ptr: np.ndarray = field(init=False, repr=False)
    adj_idx: np.ndarray = field(init=False, repr=False)
    adj_w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        flow = np.array(self.flow, dtype=np.int64, copy=True)
        dist = np.array(self.dist, dtype=np.int64, copy=True)
        if flow.ndim != 2 or flow.shape[0] != flow.shape[1] or flow.shape != dist.shape:
            raise UnsupportedInstanceError(
                f"flow and dist must be square matrices of one size, got {flow.shape} and {dist.shape}"
            )
        off = flow.copy()
        np.fill_diagonal(off, 0)
        rows, cols = np.nonzero(off)
        ptr = np.zeros(flow.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=flow.shape[0]), out=ptr[1:])
        for name, arr in (
            ("flow", flow),
            ("dist", dist),
            ("adj_ptr", ptr),
            ("adj_idx", cols.astype(np.int64)),
            ("adj_w", off[rows, cols].astype(np.int64)),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.flow.shape[0]

    @cached_property
    def adjacency(self) -> list[list[tuple[int, int]]]:
        return [
            [(int(j), int(w)) for j, w in zip(self.adj_idx[a:b], self.adj_w[a:b])]
            for a, b in zip(self.adj_ptr[:-1], self.adj_ptr[1:])
        ]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adj_ptr)

    @property
    def mean_degree(self) -> float:
        return float(self.degrees.mean()) if self.n else 0.0

    def __eq__(self, other):
        if not isinstance(other, QapInstance):
            return NotImplemented
        return (
            self.name == other.name
            and np.array_equal(self.flow, other.flow)
            and np.array_equal(self.dist, other.dist)
        )

    __hash__ = None


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    k: int
    seed: int = 0
    distance_scale: int = 1000

    def check(self) -> None:
        if not 0 < self.k < self.n:
            raise InvalidConfigError(f"need 0 < k < n, got n={self.n}, k={self.k}")
        if (self.n * self.k) % 2:
            raise InvalidConfigError(
                f"n*k must be even for a k-regular graph to exist (parity), got n={self.n}, k={self.k}"
            )
        if self.distance_scale <= 0:
            raise InvalidConfigError("distance_scale must be positive")


def validate(inst: QapInstance) -> list[str]:
    """Return human-readable violations of the instance invariants (empty if valid)."""
    problems = []
    for label, mat in (("flow", inst.flow), ("dist", inst.dist)):
        for i, j in zip(*np.nonzero(mat < 0)):
            problems.append(f"negative: {label}[{i}][{j}] = {mat[i, j]}")
        for i in np.nonzero(np.diag(mat))[0]:
            problems.append(f"nonzero-diagonal: {label}[{i}][{i}] = {mat[i, i]}")
        for i, j in zip(*np.nonzero(np.triu(mat != mat.T))):
            problems.append(f"asymmetry: {label}[{i}][{j}] = {mat[i, j]} != {label}[{j}][{i}] = {mat[j, i]}")
    n = inst.n
    for i in range(n):
        a, b = inst.adj_ptr[i], inst.adj_ptr[i + 1]
        listed = dict(zip(inst.adj_idx[a:b].tolist(), inst.adj_w[a:b].tolist()))
        row = {j: int(inst.flow[i, j]) for j in np.nonzero(inst.flow[i])[0] if j != i}
        if listed != row:
            problems.append(f"adjacency: list of facility {i} disagrees with flow row")
    if n and not problems:
        bound = n * n * int(inst.flow.max(initial=0)) * int(inst.dist.max(initial=0))
        if bound >= _COST_LIMIT:
            problems.append(f"overflow: n^2*max(F)*max(D) = {bound} exceeds the int64 cost budget")
    return problems


def check_supported(inst: QapInstance) -> QapInstance:
    problems = validate(inst)
    if problems:
        raise UnsupportedInstanceError("; ".join(problems[:5]))
    return inst


def sparsity(inst: QapInstance) -> float:
    """Fraction of nonzero off-diagonal flow entries."""
    n = inst.n
    if n < 2:
        return 0.0
    return int(inst.adj_idx.shape[0]) / (n * n - n)


def _tokens(text: str | TextIO) -> list[str]:
    if not isinstance(text, str):
        text = text.read()
    return text.split()


def parse_qaplib(text: str | TextIO, *, distance_first: bool = False, name: str = "") -> QapInstance:
    """Parse ``n`` followed by two ``n*n`` matrices.

    The first matrix is the flow matrix unless ``distance_first`` is set.
    """
    toks = _tokens(text)
    if not toks:
        raise MalformedFileError("empty instance file", token_index=0)
    values = []
    for idx, tok in enumerate(toks):
        try:
            values.append(int(tok))
        except ValueError:
            raise MalformedFileError(f"token {idx} is not an integer: {tok!r}", token_index=idx) from None
    n = values[0]
    if n < 0:
        raise MalformedFileError(f"token 0: negative size {n}", token_index=0)
    expected = 1 + 2 * n * n
    if len(values) != expected:
        raise MalformedFileError(
            f"expected {expected} tokens for n={n}, found {len(values)} "
            f"(mismatch at token index {min(len(values), expected)})",
            token_index=min(len(values), expected),
        )
    body = np.array(values[1:], dtype=np.int64)
    first = body[: n * n].reshape(n, n)
    second = body[n * n :].reshape(n, n)
    flow, dist = (second, first) if distance_first else (first, second)
    return check_supported(QapInstance(flow, dist, name=name))


def _format_matrix(mat: np.ndarray) -> Iterable[str]:
    width = max(len(str(int(mat.max(initial=0)))), 1)
    for row in mat:
        yield " ".join(f"{int(x):>{width}d}" for x in row)


def write_qaplib(inst: QapInstance, *, distance_first: bool = False) -> str:
    first, second = (inst.dist, inst.flow) if distance_first else (inst.flow, inst.dist)
    lines = [str(inst.n), ""]
    lines.extend(_format_matrix(first))
    lines.append("")
    lines.extend(_format_matrix(second))
    return "\n".join(lines) + "\n"


def grid_distances(n: int, scale: int = 1000) -> np.ndarray:
    """Rounded, scaled Euclidean distances between the first ``n`` row-major points of a square grid."""
    side = math.isqrt(n - 1) + 1 if n > 0 else 0
    idx = np.arange(n)
    xy = np.stack([idx % side, idx // side], axis=1).astype(np.float64)
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    return np.floor(scale * d + 0.5).astype(np.int64)


def generate_instance(cfg: GeneratorConfig) -> QapInstance:
    """k-regular random flow graph (unit weights) over grid Euclidean distances."""
    cfg.check()
    graph = nx.random_regular_graph(cfg.k, cfg.n, seed=cfg.seed)
    flow = nx.to_numpy_array(graph, nodelist=range(cfg.n), dtype=np.int64)
    dist = grid_distances(cfg.n, cfg.distance_scale)
    return QapInstance(flow, dist, name=f"grid-n{cfg.n}-k{cfg.k}-s{cfg.seed}")
