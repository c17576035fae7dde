"""Navigable index graphs: occlusion pruning, beam search, a flat incremental
builder, and merging of two index graphs followed by re-pruning."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import _kernels as K
from .core import KnnGraph, Metric, Neighbor, NeighborList, as_metric, merge_graph_rows
from .datasets import VectorSet, read_graph, write_graph
from .errors import InvalidInputError
from .merge import MergeParams, _setup, build_sample_graph, cross_merge


@dataclass
class DiversifyParams:
    alpha: float = 1.0
    max_degree: int = 64

    def __post_init__(self):
        if not self.alpha >= 1.0:
            raise InvalidInputError(f"alpha must be >= 1.0, got {self.alpha}")
        if self.max_degree < 1:
            raise InvalidInputError("max_degree must be >= 1")


@dataclass
class IndexGraph:
    graph: KnnGraph
    entry_point: int
    alpha: float = 1.0
    max_degree: int = 64

    @property
    def n(self) -> int:
        return self.graph.n


@njit(cache=True, nogil=True)
def _occludes(data, metric, a, dia, b, dib, alpha):
    # squared metric: alpha^2 * d2(a,b) < d2(i,b)  <=>  alpha * d(a,b) < d(i,b)
    if not dia < dib:
        return False
    dab = K.pair_distance(data[a], data[b], metric)
    if metric == K.SQEUCLIDEAN:
        return alpha * alpha * dab < dib
    return alpha * dab < dib


@njit(cache=True, nogil=True)
def _prune(data, metric, cid, cd, count, alpha, max_degree, out_id, out_d):
    kept = 0
    for b in range(count):
        if kept >= max_degree:
            break
        u = cid[b]
        ok = True
        for a in range(kept):
            if _occludes(data, metric, out_id[a], out_d[a], u, cd[b], alpha):
                ok = False
                break
        if ok:
            out_id[kept] = u
            out_d[kept] = cd[b]
            kept += 1
    return kept


@njit(cache=True, parallel=True)
def _prune_rows(data, metric, ids, dists, alpha, max_degree, out_id, out_d):
    for i in prange(ids.shape[0]):
        c = K.row_count(ids[i])
        _prune(data, metric, ids[i], dists[i], c, alpha, max_degree, out_id[i], out_d[i])


@njit(cache=True, nogil=True)
def _beam(data, metric, ids, q, entry, ef, visited, epoch):
    pool_id = np.full(ef, -1, dtype=np.int32)
    pool_d = np.full(ef, np.inf, dtype=np.float32)
    done = np.zeros(ef, dtype=np.bool_)
    visited[entry] = epoch
    pool_id[0] = entry
    pool_d[0] = np.float32(K.pair_distance(q, data[entry], metric))
    size = 1
    ndist = 1
    while True:
        j = 0
        while j < size and done[j]:
            j += 1
        if j >= size:
            break
        done[j] = True
        c = pool_id[j]
        for t in range(ids.shape[1]):
            u = ids[c, t]
            if u < 0:
                break
            if visited[u] == epoch:
                continue
            visited[u] = epoch
            d = np.float32(K.pair_distance(q, data[u], metric))
            ndist += 1
            if size < ef or K.precedes(d, u, pool_d[size - 1], pool_id[size - 1]):
                pos = size if size < ef else ef - 1
                while pos > 0 and K.precedes(d, u, pool_d[pos - 1], pool_id[pos - 1]):
                    if pos < ef:
                        pool_id[pos] = pool_id[pos - 1]
                        pool_d[pos] = pool_d[pos - 1]
                        done[pos] = done[pos - 1]
                    pos -= 1
                pool_id[pos] = u
                pool_d[pos] = d
                done[pos] = False
                if size < ef:
                    size += 1
    return pool_id[:size], pool_d[:size], ndist


@njit(cache=True)
def _build(data, metric, alpha, max_degree, efc, ids, dists, order):
    n = data.shape[0]
    visited = np.zeros(n, dtype=np.int64)
    cand_id = np.empty(max_degree + 1, dtype=np.int32)
    cand_d = np.empty(max_degree + 1, dtype=np.float32)
    out_id = np.empty(max_degree, dtype=np.int32)
    out_d = np.empty(max_degree, dtype=np.float32)
    entry = order[0]
    for step in range(1, n):
        p = order[step]
        pid, pd, _ = _beam(data, metric, ids, data[p], entry, efc, visited, step)
        kept = _prune(data, metric, pid, pd, pid.shape[0], alpha, max_degree, ids[p], dists[p])
        for j in range(kept):
            _link(data, metric, alpha, max_degree, ids, dists, ids[p, j], p, dists[p, j], cand_id, cand_d, out_id, out_d)


@njit(cache=True, nogil=True)
def _link(data, metric, alpha, max_degree, ids, dists, q, p, dq, cand_id, cand_d, out_id, out_d):
    # add edge q -> p; a row that would exceed the cap is re-diversified instead
    c = K.row_count(ids[q])
    for t in range(c):
        if ids[q, t] == p:
            return
    if c < max_degree:
        pos = c
        while pos > 0 and K.precedes(dq, p, dists[q, pos - 1], ids[q, pos - 1]):
            ids[q, pos] = ids[q, pos - 1]
            dists[q, pos] = dists[q, pos - 1]
            pos -= 1
        ids[q, pos] = p
        dists[q, pos] = dq
        return
    w = 0
    placed = False
    for t in range(c):
        if not placed and K.precedes(dq, p, dists[q, t], ids[q, t]):
            cand_id[w] = p
            cand_d[w] = dq
            w += 1
            placed = True
        cand_id[w] = ids[q, t]
        cand_d[w] = dists[q, t]
        w += 1
    if not placed:
        cand_id[w] = p
        cand_d[w] = dq
        w += 1
    r = _prune(data, metric, cand_id, cand_d, w, alpha, max_degree, out_id, out_d)
    for t in range(max_degree):
        if t < r:
            ids[q, t] = out_id[t]
            dists[q, t] = out_d[t]
        else:
            ids[q, t] = -1
            dists[q, t] = np.inf


@njit(cache=True)
def _link_reverse(data, metric, alpha, max_degree, ids, dists):
    n = ids.shape[0]
    fwd_id = ids.copy()
    fwd_d = dists.copy()
    cand_id = np.empty(max_degree + 1, dtype=np.int32)
    cand_d = np.empty(max_degree + 1, dtype=np.float32)
    out_id = np.empty(max_degree, dtype=np.int32)
    out_d = np.empty(max_degree, dtype=np.float32)
    for i in range(n):
        for t in range(fwd_id.shape[1]):
            j = fwd_id[i, t]
            if j < 0:
                break
            _link(data, metric, alpha, max_degree, ids, dists, j, i, fwd_d[i, t], cand_id, cand_d, out_id, out_d)


def _data(C) -> np.ndarray:
    return C.data if isinstance(C, VectorSet) else np.ascontiguousarray(C, dtype=np.float32)


def medoid(C, metric: Metric | str | None = None) -> int:
    """Element closest to the dataset centroid."""
    data = _data(C)
    centroid = data.astype(np.float64).mean(axis=0)
    m = as_metric(metric)
    d = [K.pair_distance(centroid, data[i], m.code) for i in range(data.shape[0])]
    return int(np.argmin(d))


def diversify_neighborhood(C, owner: int, cands: NeighborList, p: DiversifyParams,
                           metric: Metric | str | None = None) -> NeighborList:
    """Scan candidates closest-first; keep one unless an already kept neighbor occludes it."""
    if not p.alpha >= 1.0:
        raise InvalidInputError(f"alpha must be >= 1.0, got {p.alpha}")
    m = as_metric(metric)
    data = _data(C)
    cid = np.array([nb.id for nb in cands], dtype=np.int32)
    cd = np.array([nb.dist for nb in cands], dtype=np.float32)
    if np.any(np.diff(cd) < 0):
        raise InvalidInputError("candidates must be sorted ascending by distance")
    out_id = np.empty(p.max_degree, dtype=np.int32)
    out_d = np.empty(p.max_degree, dtype=np.float32)
    kept = _prune(data, m.code, cid, cd, cid.shape[0], float(p.alpha), p.max_degree, out_id, out_d)
    res = NeighborList(owner, p.max_degree)
    res.items = [Neighbor(int(out_id[j]), float(out_d[j]), False) for j in range(kept)]
    return res


def diversify_graph(C, g: KnnGraph | IndexGraph, p: DiversifyParams,
                    metric: Metric | str | None = None) -> IndexGraph:
    """Prune every row and recompute the entry point."""
    if isinstance(g, IndexGraph):
        g = g.graph
    m = as_metric(metric)
    data = _data(C)
    out = KnnGraph.empty(g.n, p.max_degree)
    _prune_rows(data, m.code, g.ids, g.dists, float(p.alpha), p.max_degree, out.ids, out.dists)
    return IndexGraph(out, medoid(data, m), p.alpha, p.max_degree)


def incremental_build(C, p: DiversifyParams, ef_construction: int = 128,
                      metric: Metric | str | None = None) -> IndexGraph:
    """Insert elements by beam search over the graph built so far.

    The medoid goes first and serves as the entry point for every insertion
    and later search; the rest follow in id order.
    """
    data = _data(C)
    n = data.shape[0]
    if n < 2:
        raise InvalidInputError("need at least 2 elements")
    if ef_construction < 1:
        raise InvalidInputError("ef_construction must be >= 1")
    m = as_metric(metric)
    g = KnnGraph.empty(n, p.max_degree)
    entry = medoid(data, m)
    order = np.concatenate([[entry], np.delete(np.arange(n), entry)]).astype(np.int64)
    _build(data, m.code, float(p.alpha), p.max_degree, ef_construction, g.ids, g.dists, order)
    return IndexGraph(g, entry, p.alpha, p.max_degree)


class Searcher:
    """Reusable beam-search state over one index (visited marks are recycled per query)."""

    def __init__(self, C, index: IndexGraph, metric: Metric | str | None = None):
        self.data = _data(C)
        self.index = index
        self.metric = as_metric(metric)
        self._visited = np.zeros(index.n, dtype=np.int64)
        self._epoch = 0

    def search(self, query, ef: int, k: int) -> tuple[np.ndarray, np.ndarray, int]:
        if ef < k:
            raise InvalidInputError(f"ef={ef} must be >= k={k}")
        if self.index.n == 0:
            raise InvalidInputError("empty index")
        self._epoch += 1
        q = np.ascontiguousarray(query, dtype=np.float32).ravel()
        ids, dists, nd = _beam(self.data, self.metric.code, self.index.graph.ids, q,
                               self.index.entry_point, ef, self._visited, self._epoch)
        return ids[:k], dists[:k], nd


def greedy_search(C, index: IndexGraph, query, ef: int, k: int,
                  metric: Metric | str | None = None) -> tuple[NeighborList, int]:
    """Best-first beam search from the entry point.

    Returns the ``k`` best pool members and the number of distances computed.
    """
    ids, dists, nd = Searcher(C, index, metric).search(query, ef, k)
    res = NeighborList(-1, k)
    res.items = [Neighbor(int(i), float(d), False) for i, d in zip(ids, dists)]
    return res, nd


def merge_index_candidates(C1: VectorSet, C2: VectorSet, idx1: IndexGraph, idx2: IndexGraph, mp: MergeParams,
                           metric: Metric | str | None = None) -> tuple[np.ndarray, KnnGraph]:
    """Unpruned merged rows: each subgraph row plus its cross-subset neighbors, nothing truncated.

    Returns the concatenated vectors and the candidate graph over them.
    """
    if idx1.max_degree != idx2.max_degree or idx1.graph.k != idx2.graph.k:
        raise InvalidInputError(f"degree caps differ: {idx1.max_degree} vs {idx2.max_degree}")
    if mp.k != idx1.max_degree:
        raise InvalidInputError(f"merge k={mp.k} must equal the degree cap {idx1.max_degree}")
    data, labels, g0 = _setup([C1, C2], [idx1.graph, idx2.graph], mp)
    cross = cross_merge(data, labels, build_sample_graph(g0, mp.lam), mp, as_metric(metric), multi=False)
    return data, merge_graph_rows(cross, g0, g0.k + cross.k)


def merge_index_graphs(C1: VectorSet, C2: VectorSet, idx1: IndexGraph, idx2: IndexGraph, mp: MergeParams,
                       dp: DiversifyParams, metric: Metric | str | None = None) -> IndexGraph:
    """Two-way Merge the index subgraphs as k-NN graphs, re-prune every row, then link back.

    Original neighbors are all kept through the merge; pruning alone decides
    what goes. The final pass adds each kept edge's reverse the way
    ``incremental_build`` does, re-pruning only rows that would exceed the cap.
    """
    data, cands = merge_index_candidates(C1, C2, idx1, idx2, mp, metric)
    return link_reverse(data, diversify_graph(data, cands, dp, metric), metric)


def link_reverse(C, index: IndexGraph, metric: Metric | str | None = None) -> IndexGraph:
    """Add ``j -> i`` for every edge ``i -> j``, rows visited in id order; overfull rows are re-pruned."""
    data = _data(C)
    g = index.graph.copy()
    _link_reverse(data, as_metric(metric).code, float(index.alpha), index.max_degree, g.ids, g.dists)
    return IndexGraph(g, index.entry_point, index.alpha, index.max_degree)


def write_index(path: str | os.PathLike, index: IndexGraph) -> None:
    """GraphFile plus a one-line JSON sidecar at ``path + '.meta'``."""
    write_graph(path, index.graph)
    meta = {"entry_point": index.entry_point, "alpha": index.alpha, "max_degree": index.max_degree}
    with open(os.fspath(path) + ".meta", "w") as f:
        f.write(json.dumps(meta) + "\n")


def read_index(path: str | os.PathLike) -> IndexGraph:
    g = read_graph(path)
    meta_path = os.fspath(path) + ".meta"
    if os.path.exists(meta_path):
        with open(meta_path) as f:
            meta = json.loads(f.readline())
    else:
        meta = {"entry_point": 0, "alpha": 1.0, "max_degree": g.k}
    return IndexGraph(g, int(meta["entry_point"]), float(meta["alpha"]), int(meta["max_degree"]))
