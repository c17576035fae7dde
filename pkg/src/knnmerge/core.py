"""Neighbor lists, k-NN graphs, metrics and the exact graph primitives."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernels as K
from .errors import InvalidInputError

_METRIC_CODES = {
    "sqeuclidean": K.SQEUCLIDEAN,
    "euclidean": K.EUCLIDEAN,
    "cosine": K.COSINE,
}


@dataclass(frozen=True)
class Metric:
    kind: str = "sqeuclidean"

    def __post_init__(self):
        if self.kind not in _METRIC_CODES:
            raise InvalidInputError(f"unknown metric {self.kind!r}; expected one of {sorted(_METRIC_CODES)}")

    @property
    def code(self) -> int:
        return _METRIC_CODES[self.kind]

    @property
    def squared(self) -> bool:
        return self.kind == "sqeuclidean"


SQEUCLIDEAN = Metric("sqeuclidean")


def as_metric(metric: Metric | str | None) -> Metric:
    if metric is None:
        return SQEUCLIDEAN
    if isinstance(metric, Metric):
        return metric
    return Metric(metric)


def distance(a, b, metric: Metric | str | None = None) -> float:
    """Distance between two vectors; squared L2 unless another metric is given."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(K.pair_distance(a, b, as_metric(metric).code))


@dataclass(frozen=True)
class Neighbor:
    id: int
    dist: float
    flag: bool = True

    def key(self) -> tuple[float, int]:
        return (self.dist, self.id)


class NeighborList:
    """Bounded neighbor list of one element, kept sorted by (dist, id)."""

    def __init__(self, owner: int, capacity: int, items: Iterable[Neighbor] = ()):
        self.owner = owner
        self.capacity = capacity
        self.items: list[Neighbor] = []
        for nb in items:
            self.insert(nb)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Neighbor]:
        return iter(self.items)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NeighborList):
            return NotImplemented
        return self.owner == other.owner and self.items == other.items

    def __repr__(self) -> str:
        body = ", ".join(f"({nb.id},{nb.dist:g})" for nb in self.items)
        return f"NeighborList(owner={self.owner}, cap={self.capacity}, [{body}])"

    @property
    def ids(self) -> list[int]:
        return [nb.id for nb in self.items]

    @property
    def full(self) -> bool:
        return len(self.items) >= self.capacity

    def insert(self, cand: Neighbor) -> bool:
        return ordered_insert(self, cand)

    def truncated(self, k: int) -> NeighborList:
        return NeighborList(self.owner, k, self.items[:k])


def ordered_insert(lst: NeighborList, cand: Neighbor) -> bool:
    """Insert ``cand`` at its sorted position; True iff the list changed.

    Duplicates are rejected. A full list only accepts candidates ranking
    strictly before its worst item under (dist, id) ordering.
    """
    if cand.id == lst.owner:
        raise InvalidInputError(f"self-loop: candidate {cand.id} is the list owner")
    if cand.dist < 0:
        raise InvalidInputError(f"negative distance {cand.dist}")
    items = lst.items
    if lst.capacity <= 0:
        return False
    if len(items) >= lst.capacity and cand.key() >= items[-1].key():
        return False
    if any(nb.id == cand.id for nb in items):
        return False
    pos = bisect.bisect_left([nb.key() for nb in items], cand.key())
    items.insert(pos, cand)
    if len(items) > lst.capacity:
        items.pop()
    return True


def merge_sorted_lists(a: NeighborList, b: NeighborList, k: int) -> NeighborList:
    """Exact top-``k`` of the union of two sorted lists, duplicates collapsed to the smaller dist."""
    if a.owner != b.owner:
        raise InvalidInputError(f"owner mismatch: {a.owner} vs {b.owner}")
    out: list[Neighbor] = []
    seen: set[int] = set()
    ia = ib = 0
    A, B = a.items, b.items
    while len(out) < k and (ia < len(A) or ib < len(B)):
        if ib >= len(B) or (ia < len(A) and A[ia].key() <= B[ib].key()):
            nb = A[ia]
            ia += 1
        else:
            nb = B[ib]
            ib += 1
        if nb.id not in seen:
            seen.add(nb.id)
            out.append(nb)
    res = NeighborList(a.owner, k)
    res.items = out
    return res


@dataclass
class KnnGraph:
    """Fixed-capacity k-NN graph over ``n`` elements stored as parallel arrays.

    ``ids[i, j] == -1`` marks an empty slot; the valid prefix of each row is
    sorted by (dist, id).
    """

    ids: np.ndarray
    dists: np.ndarray
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int32)
        self.dists = np.ascontiguousarray(self.dists, dtype=np.float32)
        if self.flags is None:
            self.flags = np.zeros(self.ids.shape, dtype=bool)
        self.flags = np.ascontiguousarray(self.flags, dtype=bool)
        if self.ids.ndim != 2 or self.ids.shape != self.dists.shape or self.ids.shape != self.flags.shape:
            raise InvalidInputError("ids, dists and flags must share one 2-D shape")

    @classmethod
    def empty(cls, n: int, k: int) -> KnnGraph:
        return cls(
            np.full((n, k), -1, dtype=np.int32),
            np.full((n, k), np.inf, dtype=np.float32),
            np.zeros((n, k), dtype=bool),
        )

    @classmethod
    def from_lists(cls, rows: Sequence[NeighborList], k: int | None = None) -> KnnGraph:
        if k is None:
            k = max((r.capacity for r in rows), default=0)
        g = cls.empty(len(rows), k)
        for i, row in enumerate(rows):
            if row.owner != i:
                raise InvalidInputError(f"row {i} is owned by {row.owner}")
            for j, nb in enumerate(row.items[:k]):
                g.ids[i, j] = nb.id
                g.dists[i, j] = nb.dist
                g.flags[i, j] = nb.flag
        return g

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def k(self) -> int:
        return self.ids.shape[1]

    def counts(self) -> np.ndarray:
        return (self.ids >= 0).sum(axis=1)

    def row(self, i: int) -> NeighborList:
        lst = NeighborList(i, self.k)
        c = int((self.ids[i] >= 0).sum())
        lst.items = [
            Neighbor(int(self.ids[i, j]), float(self.dists[i, j]), bool(self.flags[i, j])) for j in range(c)
        ]
        return lst

    def rows(self) -> list[NeighborList]:
        return [self.row(i) for i in range(self.n)]

    def copy(self) -> KnnGraph:
        return KnnGraph(self.ids.copy(), self.dists.copy(), self.flags.copy())

    def resized(self, k: int) -> KnnGraph:
        """Truncate or pad every row to capacity ``k``."""
        g = KnnGraph.empty(self.n, k)
        w = min(k, self.k)
        g.ids[:, :w] = self.ids[:, :w]
        g.dists[:, :w] = self.dists[:, :w]
        g.flags[:, :w] = self.flags[:, :w]
        return g

    def same_as(self, other: KnnGraph, flags: bool = True) -> bool:
        """Bit-exact equality of ids and dists (and flags unless disabled)."""
        if self.ids.shape != other.ids.shape:
            return False
        ok = np.array_equal(self.ids, other.ids) and np.array_equal(
            self.dists.view(np.uint32), other.dists.view(np.uint32)
        )
        return bool(ok and (not flags or np.array_equal(self.flags, other.flags)))

    def validate(self) -> None:
        """Raise if any row breaks the NeighborList invariants."""
        n = self.n
        valid = self.ids >= 0
        # valid entries form a prefix
        if np.any(~valid[:, :-1] & valid[:, 1:]):
            raise InvalidInputError("row has a hole before a valid entry")
        if np.any(self.ids >= n):
            raise InvalidInputError("neighbor id out of range")
        if np.any(self.ids == np.arange(n, dtype=np.int32)[:, None]):
            raise InvalidInputError("self-loop present")
        if np.any(valid & ~(self.dists >= 0)):
            raise InvalidInputError("negative or NaN distance")
        d0, d1 = self.dists[:, :-1], self.dists[:, 1:]
        i0, i1 = self.ids[:, :-1], self.ids[:, 1:]
        both = valid[:, :-1] & valid[:, 1:]
        ordered = (d0 < d1) | ((d0 == d1) & (i0 < i1))
        if np.any(both & ~ordered):
            raise InvalidInputError("row not sorted by (dist, id)")
        s = np.sort(np.where(valid, self.ids, -1 - np.arange(self.k)[None, :]), axis=1)
        if np.any(s[:, 1:] == s[:, :-1]):
            raise InvalidInputError("duplicate neighbor id")


@dataclass
class SubsetMap:
    """Maps every element to the index of the subset containing it."""

    assignment: np.ndarray
    m: int

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int32)
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.m):
            raise InvalidInputError("subset index out of range")

    @classmethod
    def contiguous(cls, sizes: Sequence[int]) -> SubsetMap:
        return cls(np.repeat(np.arange(len(sizes), dtype=np.int32), sizes), len(sizes))

    def __call__(self, i):
        return self.assignment[i]

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def members(self, s: int) -> np.ndarray:
        """Global ids of subset ``s`` in ascending order (local index = position)."""
        return np.flatnonzero(self.assignment == s).astype(np.int32)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.m)


def merge_graph_rows(a: KnnGraph, b: KnnGraph, k: int | None = None) -> KnnGraph:
    """Row-wise ``merge_sorted_lists`` of two graphs over the same elements."""
    if a.n != b.n:
        raise InvalidInputError(f"row count mismatch: {a.n} vs {b.n}")
    k = max(a.k, b.k) if k is None else k
    out = KnnGraph.empty(a.n, k)
    K.merge_graphs(a.ids, a.dists, a.flags, b.ids, b.dists, b.flags, out.ids, out.dists, out.flags)
    return out


def reverse_graph(g: KnnGraph, cap: int) -> KnnGraph:
    """Reverse adjacency capped at ``cap`` per row, keeping the closest reverse neighbors."""
    r = KnnGraph.empty(g.n, cap)
    if cap > 0:
        K.reverse_rows(g.ids, g.dists, r.ids, r.dists, r.flags)
    return r


def concat_graphs(graphs: Sequence[KnnGraph], subset_map: SubsetMap) -> KnnGraph:
    """Concatenate per-subset graphs (local ids) into one graph over global ids."""
    if len(graphs) != subset_map.m:
        raise InvalidInputError(f"{len(graphs)} graphs for {subset_map.m} subsets")
    k = max((g.k for g in graphs), default=0)
    out = KnnGraph.empty(subset_map.n, k)
    for s, g in enumerate(graphs):
        members = subset_map.members(s)
        if g.n != members.shape[0]:
            raise InvalidInputError(f"subset {s} has {members.shape[0]} elements but graph has {g.n} rows")
        valid = g.ids >= 0
        if np.any(g.ids >= g.n):
            raise InvalidInputError(f"graph {s} has neighbor ids outside its subset")
        out.ids[members, : g.k] = np.where(valid, members[np.where(valid, g.ids, 0)], -1)
        out.dists[members, : g.k] = g.dists
        out.flags[members, : g.k] = g.flags
    return out
