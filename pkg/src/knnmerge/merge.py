"""Subgraph merging: Two-way Merge, Multi-way Merge and the bottom-up hierarchy.

All merges work on the concatenation of their input subsets: row ``r`` of an
output graph is the ``r``-th vector of ``subsets[0]``, then ``subsets[1]``,
and so on, and neighbor ids index that same concatenation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .core import KnnGraph, Metric, SubsetMap, as_metric, concat_graphs, merge_graph_rows, reverse_graph
from .datasets import VectorSet
from .errors import InvalidInputError
from .parallel import local_join
from .trace import Trace


@dataclass
class MergeParams:
    k: int
    lam: int = 20
    delta: float = 0.001
    max_iters: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError("k must be >= 1")
        if not 1 <= self.lam <= self.k:
            raise InvalidInputError(f"lambda={self.lam} must lie in [1, k={self.k}]")
        if not 0 < self.delta < 1:
            raise InvalidInputError("delta must lie in (0, 1)")
        if self.max_iters < 0:
            raise InvalidInputError("max_iters must be >= 0")

    def with_seed(self, seed: int) -> MergeParams:
        return MergeParams(self.k, self.lam, self.delta, self.max_iters, seed)


def build_sample_graph(g0: KnnGraph, lam: int) -> KnnGraph:
    """Per row, the ``lam`` closest neighbors plus up to ``lam`` closest reverse neighbors, deduplicated."""
    fwd = g0.resized(lam)
    fwd.flags[:] = False
    return merge_graph_rows(fwd, reverse_graph(g0, lam), 2 * lam)


def _digest(g: KnnGraph) -> bytes:
    h = hashlib.sha256()
    for a in (g.ids, g.dists, g.flags):
        h.update(a.tobytes())
    return h.digest()


def _random_foreign(rng: np.random.Generator, labels: np.ndarray, starts: np.ndarray, sizes: np.ndarray,
                    lam: int, new: np.ndarray, new_cnt: np.ndarray) -> None:
    """Fill ``new[i]`` with ``lam`` distinct random ids from subsets other than ``labels[i]``.

    Draw slots cycle round-robin over the foreign subsets.
    """
    n = labels.shape[0]
    m = starts.shape[0]
    over = 2 * lam + 4
    slot = np.arange(over) % (m - 1)
    sub = (labels[:, None] + 1 + slot[None, :]) % m
    u = rng.random((n, over))
    cand = (starts[sub] + np.minimum((u * sizes[sub]).astype(np.int64), sizes[sub] - 1)).astype(np.int32)
    exclude = np.full(n, -1, dtype=np.int32)
    K.distinct_random_fill(cand, lam, exclude, new, new_cnt)
    foreign_total = n - sizes[labels]
    want = np.minimum(lam, foreign_total)
    for i in np.flatnonzero(new_cnt < want):
        have = set(new[i, : new_cnt[i]].tolist())
        pool = np.array([u for u in range(n) if labels[u] != labels[i] and u not in have], dtype=np.int32)
        extra = rng.choice(pool, size=int(want[i] - new_cnt[i]), replace=False)
        new[i, new_cnt[i] : want[i]] = extra
        new_cnt[i] = want[i]


def cross_merge(data: np.ndarray, labels: np.ndarray, S: KnnGraph, params: MergeParams,
                metric: Metric, multi: bool, trace: Trace | None = None) -> KnnGraph:
    """Iterate sampling and Local-Join against the fixed sample graph ``S``.

    ``labels`` gives each row's subset; subsets must be contiguous blocks in
    label order. Returns the graph of neighbors found outside each row's own
    subset. ``multi`` selects the multi-way join (new/old caches and
    cross-matching inside the sampled neighborhood).
    """
    n = data.shape[0]
    k, lam = params.k, params.lam
    m = int(labels.max()) + 1 if n else 0
    sizes = np.bincount(labels, minlength=m).astype(np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    G = KnnGraph.empty(n, k)
    if n == 0 or params.max_iters == 0:
        return G
    rng = np.random.default_rng(params.seed)
    check = trace is not None and trace.check
    s_digest = _digest(S) if check else None

    width_old = 2 * lam if multi else 0
    new = np.full((n, 2 * lam), -1, dtype=np.int32)
    old = np.full((n, width_old), -1, dtype=np.int32)
    new_cnt = np.zeros(n, dtype=np.int64)
    old_cnt = np.zeros(n, dtype=np.int64)
    rnew = np.full((n, lam), -1, dtype=np.int32)
    rold = np.full((n, lam if multi else 0), -1, dtype=np.int32)
    rnew_cnt = np.zeros(n, dtype=np.int64)
    rold_cnt = np.zeros(n, dtype=np.int64)
    S_cnt = S.counts().astype(np.int64)
    mode = K.JOIN_MULTI_WAY if multi else K.JOIN_TWO_WAY
    labels = np.ascontiguousarray(labels, dtype=np.int32)

    for it in range(params.max_iters):
        if it == 0:
            _random_foreign(rng, labels, starts, sizes, lam, new, new_cnt)
            old_cnt[:] = 0
        else:
            K.sample_rows(G.ids, G.flags, lam, multi, new, new_cnt, old, old_cnt,
                          rnew, rnew_cnt, rold, rold_cnt)
        if check:
            peak = int(max(rnew_cnt.max(initial=0), rold_cnt.max(initial=0)))
            trace.max_reverse = max(trace.max_reverse, peak)
            if peak > lam:
                trace.violations["reverse_cap"] += 1
            pre_false = np.where((G.ids >= 0) & ~G.flags, G.ids, -1)
        K.fold_reverse(new, new_cnt, rnew, rnew_cnt, old[:, :0], np.zeros(n, dtype=np.int64))
        if multi:
            K.fold_reverse(old, old_cnt, rold, rold_cnt, new, new_cnt)
        if check and (rnew_cnt.any() or rold_cnt.any()):
            trace.violations["reverse_not_cleared"] += 1
        inserted, computed, violations = local_join(data, metric.code, labels, mode, G.ids, G.dists, G.flags,
                                                    new, new_cnt, old, old_cnt, S.ids, S_cnt)
        if trace is not None:
            trace.inserts.append(inserted)
            trace.dist_counts.append(computed)
            if check:
                trace.violations["same_subset_join"] += violations
                _audit(G, labels, pre_false, trace)
            if trace.on_iteration is not None:
                trace.on_iteration(it, G)
        if inserted < params.delta * n * k:
            break
    if check and _digest(S) != s_digest:
        trace.violations["sample_graph_mutated"] += 1
    return G


def _audit(G: KnnGraph, labels: np.ndarray, pre_false: np.ndarray, trace: Trace) -> None:
    valid = G.ids >= 0
    own = labels[:, None]
    if np.any(valid & (labels[np.where(valid, G.ids, 0)] == own)):
        trace.violations["cross_subset_purity"] += 1
    # an id flagged false before the join must still be false if present
    for lo in range(0, G.n, 4096):
        ids = G.ids[lo : lo + 4096]
        was_false = ((ids[:, :, None] == pre_false[lo : lo + 4096, None, :]) & (ids >= 0)[:, :, None]).any(2)
        if np.any(was_false & G.flags[lo : lo + 4096]):
            trace.violations["flag_monotonicity"] += 1
            break
    try:
        G.validate()
    except InvalidInputError:
        trace.violations["row_invariants"] += 1


def _check_inputs(subsets: Sequence[VectorSet], subgraphs: Sequence[KnnGraph], k: int) -> None:
    if len(subsets) != len(subgraphs):
        raise InvalidInputError(f"{len(subsets)} subsets but {len(subgraphs)} subgraphs")
    dims = {s.d for s in subsets if s.n}
    if len(dims) > 1:
        raise InvalidInputError(f"subsets have differing dimensions {sorted(dims)}")
    for s, g in zip(subsets, subgraphs):
        if s.n != g.n:
            raise InvalidInputError(f"subset of {s.n} vectors paired with a {g.n}-row graph")
        if g.k > k:
            raise InvalidInputError(f"subgraph capacity {g.k} exceeds k={k}")
    gids = np.concatenate([s.global_ids() for s in subsets])
    if np.unique(gids).shape[0] != gids.shape[0]:
        raise InvalidInputError("subsets overlap")


def _setup(subsets, subgraphs, params):
    _check_inputs(subsets, subgraphs, params.k)
    sizes = [s.n for s in subsets]
    data = np.ascontiguousarray(np.vstack([s.data for s in subsets]), dtype=np.float32)
    smap = SubsetMap.contiguous(sizes)
    g0 = concat_graphs(list(subgraphs), smap)
    return data, smap.assignment, g0


def two_way_merge(C1: VectorSet, C2: VectorSet, g1: KnnGraph, g2: KnnGraph, params: MergeParams,
                  metric: Metric | str | None = None, trace: Trace | None = None) -> KnnGraph:
    """Neighbors each element of ``C1 ∪ C2`` has in the opposite subset."""
    data, labels, g0 = _setup([C1, C2], [g1, g2], params)
    S = build_sample_graph(g0, params.lam)
    return cross_merge(data, labels, S, params, as_metric(metric), multi=False, trace=trace)


def two_way_merge_full(C1: VectorSet, C2: VectorSet, g1: KnnGraph, g2: KnnGraph, params: MergeParams,
                       metric: Metric | str | None = None, trace: Trace | None = None) -> KnnGraph:
    """Complete k-NN graph over ``C1 ∪ C2``: the cross graph merged row-wise with the subgraphs."""
    data, labels, g0 = _setup([C1, C2], [g1, g2], params)
    S = build_sample_graph(g0, params.lam)
    cross = cross_merge(data, labels, S, params, as_metric(metric), multi=False, trace=trace)
    return merge_graph_rows(cross, g0, params.k)


def multi_way_merge(subsets: Sequence[VectorSet], subgraphs: Sequence[KnnGraph], params: MergeParams,
                    metric: Metric | str | None = None, trace: Trace | None = None) -> KnnGraph:
    """Merge all subgraphs at once; the result is finished with a row-wise merge against the subgraphs."""
    if len(subsets) < 2:
        raise InvalidInputError("multi-way merge needs at least 2 subsets")
    data, labels, g0 = _setup(subsets, subgraphs, params)
    S = build_sample_graph(g0, params.lam)
    cross = cross_merge(data, labels, S, params, as_metric(metric), multi=True, trace=trace)
    return merge_graph_rows(cross, g0, params.k)


def _union(a: VectorSet, b: VectorSet) -> VectorSet:
    data = np.vstack([a.data, b.data])
    if a.ids is None and b.ids is None and a.id_base + a.n == b.id_base:
        return VectorSet(data, a.id_base)
    return VectorSet(data, ids=np.concatenate([a.global_ids(), b.global_ids()]))


def hierarchical_merge(subsets: Sequence[VectorSet], subgraphs: Sequence[KnnGraph], params: MergeParams,
                       metric: Metric | str | None = None, trace: Trace | None = None) -> KnnGraph:
    """Bottom-up pairwise Two-way Merge; an odd graph at a level is promoted unchanged.

    Call ``c`` (0-based, in execution order) uses seed ``params.seed + c``.
    """
    if len(subsets) < 2:
        raise InvalidInputError("hierarchical merge needs at least 2 subsets")
    _check_inputs(subsets, subgraphs, params.k)
    level = list(zip(subsets, subgraphs))
    calls = 0
    while len(level) > 1:
        nxt = []
        for p in range(0, len(level) - 1, 2):
            (ca, ga), (cb, gb) = level[p], level[p + 1]
            child = trace.child() if trace is not None else None
            g = two_way_merge_full(ca, cb, ga, gb, params.with_seed(params.seed + calls), metric, child)
            calls += 1
            nxt.append((_union(ca, cb), g))
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    if trace is not None:
        trace.merge_calls += calls
    return level[0][1]


def to_global(g: KnnGraph, subsets: Sequence[VectorSet]) -> KnnGraph:
    """Reorder a merge output (concatenation order) so row and neighbor ids are global ids.

    Global ids must be a permutation of ``0..n-1``.
    """
    gids = np.concatenate([s.global_ids() for s in subsets])
    if not np.array_equal(np.sort(gids), np.arange(g.n)):
        raise InvalidInputError("global ids of the subsets do not cover 0..n-1")
    out = KnnGraph.empty(g.n, g.k)
    valid = g.ids >= 0
    out.ids[gids] = np.where(valid, gids[np.where(valid, g.ids, 0)], -1)
    out.dists[gids] = g.dists
    out.flags[gids] = g.flags
    # rewriting ids can reorder equal-distance ties
    K.sort_rows(out.ids, out.dists, out.flags)
    return out
