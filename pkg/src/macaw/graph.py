"""Causal DAG representation and C-MADE mask construction."""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, CycleError, ShapeError


@dataclass(frozen=True, eq=False)
class CausalDag:
    """A DAG over named variables.

    ``adjacency[j, i] == 1`` means variable ``j`` is a parent of ``i``.
    """

    names: tuple[str, ...]
    adjacency: np.ndarray
    topo_order: tuple[int, ...]
    levels: tuple[int, ...] = field(default=())

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.dim:
                raise IndexError(f"variable index {name} out of range for D={self.dim}")
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None

    def parents(self, i: int) -> list[int]:
        i = self.index(i)
        return [int(j) for j in np.flatnonzero(self.adjacency[:, i])]

    def children(self, i: int) -> list[int]:
        i = self.index(i)
        return [int(j) for j in np.flatnonzero(self.adjacency[i, :])]

    @property
    def sources(self) -> np.ndarray:
        """Boolean D-vector, True where a variable has no parents."""
        return ~self.adjacency.any(axis=0)

    def level_groups(self) -> list[list[int]]:
        """Variables grouped by longest-path depth from a source, shallowest first.

        All parents of a variable sit in strictly shallower groups, so a whole
        group can be inverted at once.
        """
        depth = max(self.levels) if self.levels else 0
        return [[i for i in self.topo_order if self.levels[i] == d] for d in range(depth + 1)]

    def edges(self) -> list[tuple[str, str]]:
        js, is_ = np.nonzero(self.adjacency)
        return [(self.names[j], self.names[i]) for j, i in zip(js, is_)]


def validate_dag(names: Sequence[str] | CausalDag, adjacency=None) -> CausalDag:
    """Check shape and acyclicity and compute a deterministic topological order.

    Ties are broken by ascending original index.
    """
    if isinstance(names, CausalDag):
        names, adjacency = names.names, names.adjacency
    names = tuple(str(n) for n in names)
    A = np.asarray(adjacency)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {A.shape}")
    if A.shape[0] != len(names):
        raise ShapeError(f"adjacency is {A.shape[0]}x{A.shape[0]} but {len(names)} names given")
    if len(set(names)) != len(names):
        raise ShapeError("variable names must be unique")
    if not np.all((A == 0) | (A == 1)):
        raise ShapeError("adjacency entries must be 0 or 1")
    A = A.astype(np.int8)
    A.setflags(write=False)
    D = len(names)
    if np.any(np.diag(A)):
        raise CycleError("self-loop in adjacency")

    indegree = A.sum(axis=0).astype(int)
    ready = [i for i in range(D) if indegree[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        j = heapq.heappop(ready)
        order.append(j)
        for i in np.flatnonzero(A[j]):
            indegree[i] -= 1
            if indegree[i] == 0:
                heapq.heappush(ready, int(i))
    if len(order) != D:
        stuck = sorted(set(range(D)) - set(order))
        raise CycleError(f"graph has a cycle among {[names[i] for i in stuck]}")

    levels = [0] * D
    for i in order:
        ps = np.flatnonzero(A[:, i])
        if len(ps):
            levels[i] = 1 + max(levels[p] for p in ps)
    return CausalDag(names, A, tuple(order), tuple(levels))


def dag_from_edges(names: Sequence[str], edges: Sequence[Sequence[str]]) -> CausalDag:
    names = list(names)
    A = np.zeros((len(names), len(names)), dtype=np.int8)
    for edge in edges:
        if len(edge) != 2:
            raise ConfigError(f"edge must be a [parent, child] pair, got {edge!r}")
        parent, child = edge
        for v in (parent, child):
            if v not in names:
                raise ConfigError(f"edge {parent}->{child} names unknown variable {v!r}")
        A[names.index(parent), names.index(child)] = 1
    return validate_dag(names, A)


def load_graph(path: str | Path) -> CausalDag:
    """Read a graph file (TOML or JSON) with ``names`` and ``edges`` keys."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    else:
        import tomli

        doc = tomli.loads(text)
    doc = doc.get("graph", doc)
    unknown = set(doc) - {"names", "edges"}
    if unknown:
        raise ConfigError(f"unknown graph key(s): {sorted(unknown)}")
    return dag_from_edges(doc["names"], doc.get("edges", []))


def descendants(dag: CausalDag, i: int) -> set[int]:
    """Transitive closure of the children of ``i`` (excluding ``i``)."""
    i = dag.index(i)
    seen: set[int] = set()
    stack = dag.children(i)
    while stack:
        j = stack.pop()
        if j not in seen:
            seen.add(j)
            stack.extend(dag.children(j))
    return seen


@dataclass(frozen=True, eq=False)
class MaskSet:
    """Binary masks in weight layout: rows are output units, columns input units.

    Hidden unit ``k`` carries the variable label ``k % D``.
    """

    input_to_hidden: np.ndarray
    hidden_to_hidden: tuple[np.ndarray, ...]
    hidden_to_output: np.ndarray
    hidden_multiple: int

    @property
    def dim(self) -> int:
        return self.input_to_hidden.shape[1]

    @property
    def hidden_width(self) -> int:
        return self.input_to_hidden.shape[0]

    @property
    def num_hidden_layers(self) -> int:
        return 1 + len(self.hidden_to_hidden)

    def layers(self) -> list[np.ndarray]:
        """Interior masks in application order (input->h1, h1->h2, ...)."""
        return [self.input_to_hidden, *self.hidden_to_hidden]

    def connectivity(self) -> np.ndarray:
        """Boolean D x D matrix: entry (i, j) is True if output i can reach input j."""
        path = self.hidden_to_output.astype(np.int64)
        for M in reversed(self.layers()):
            path = (path @ M.astype(np.int64) > 0).astype(np.int64)
        return path.astype(bool)


def build_masks(dag: CausalDag, hidden_multiple: int, num_hidden_layers: int) -> MaskSet:
    if hidden_multiple < 1:
        raise ConfigError(f"hidden_multiple must be >= 1, got {hidden_multiple}")
    if num_hidden_layers < 1:
        raise ConfigError(f"num_hidden_layers must be >= 1, got {num_hidden_layers}")
    n = int(hidden_multiple)
    A = dag.adjacency.astype(np.float64)
    A_diag = A + np.eye(dag.dim)
    # weight layout is (out, in), hence the transposes
    first = np.tile(A_diag.T, (n, 1))
    inner = tuple(np.tile(A_diag.T, (n, n)) for _ in range(num_hidden_layers - 1))
    last = np.tile(A.T, (1, n))
    for M in (first, last, *inner):
        M.setflags(write=False)
    return MaskSet(first, inner, last, n)


def build_masks_for_width(dag: CausalDag, hidden_width: int, num_hidden_layers: int) -> MaskSet:
    """Entry point taking a raw hidden width; it must be a multiple of D."""
    if hidden_width < dag.dim or hidden_width % dag.dim:
        raise ConfigError(
            f"hidden width {hidden_width} is not a positive multiple of D={dag.dim}"
        )
    return build_masks(dag, hidden_width // dag.dim, num_hidden_layers)


def hidden_multiple_for(dag: CausalDag, min_units: int) -> int:
    """Smallest multiple n with n * D >= min_units."""
    return max(1, -(-int(min_units) // dag.dim))
