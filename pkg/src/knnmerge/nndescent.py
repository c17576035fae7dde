"""NN-Descent: the baseline builder used for subgraphs and as the comparison point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import KnnGraph, Metric, as_metric
from .datasets import VectorSet
from .errors import InvalidInputError
from .parallel import local_join
from .trace import Trace


@dataclass
class NNDescentParams:
    k: int
    lam: int | None = None  # defaults to min(20, k)
    max_iters: int = 30
    delta: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.lam is None:
            self.lam = min(20, self.k)
        if self.k < 1:
            raise InvalidInputError("k must be >= 1")
        if not 1 <= self.lam <= self.k:
            raise InvalidInputError(f"lambda={self.lam} must lie in [1, k={self.k}]")
        if not 0 < self.delta < 1:
            raise InvalidInputError("delta must lie in (0, 1)")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")


def _as_data(C) -> np.ndarray:
    if isinstance(C, VectorSet):
        return C.data
    return np.ascontiguousarray(C, dtype=np.float32)


def random_graph(data: np.ndarray, k: int, rng: np.random.Generator, metric: Metric) -> KnnGraph:
    """Each row gets ``k`` distinct non-self ids drawn from ``rng``, sorted by distance."""
    n = data.shape[0]
    g = KnnGraph.empty(n, k)
    over = min(4 * n, 2 * k + 8)
    cand = rng.integers(0, n, size=(n, over), dtype=np.int32)
    owners = np.arange(n, dtype=np.int64)
    want = np.full(n, k, dtype=np.int64)
    placed = K.fill_from_candidates(data, metric.code, cand, owners, want, g.ids, g.dists, g.flags, True)
    for i in np.flatnonzero(placed < k):
        have = set(g.ids[i, : placed[i]].tolist())
        pool = np.array([u for u in range(n) if u != i and u not in have], dtype=np.int32)
        extra = rng.choice(pool, size=k - placed[i], replace=False)
        g.ids[i, placed[i] : k] = extra
        g.dists[i, placed[i] : k] = [K.pair_distance(data[i], data[u], metric.code) for u in extra]
        g.flags[i, placed[i] : k] = True
    K.sort_rows(g.ids, g.dists, g.flags)
    return g


def nn_descent_build(C, params: NNDescentParams, metric: Metric | str | None = None,
                     trace: Trace | None = None) -> KnnGraph:
    """Approximate k-NN graph by iterated Sampling and Local-Join.

    Stops once an iteration makes fewer than ``delta * n * k`` successful
    inserts, or after ``max_iters`` iterations.
    """
    metric = as_metric(metric)
    data = _as_data(C)
    n = data.shape[0]
    k, lam = params.k, params.lam
    if n <= k:
        raise InvalidInputError(f"need n > k (n={n}, k={k})")
    rng = np.random.default_rng(params.seed)
    g = random_graph(data, k, rng, metric)

    new = np.full((n, 2 * lam), -1, dtype=np.int32)
    old = np.full((n, 2 * lam), -1, dtype=np.int32)
    new_cnt = np.zeros(n, dtype=np.int64)
    old_cnt = np.zeros(n, dtype=np.int64)
    rnew = np.full((n, lam), -1, dtype=np.int32)
    rold = np.full((n, lam), -1, dtype=np.int32)
    rnew_cnt = np.zeros(n, dtype=np.int64)
    rold_cnt = np.zeros(n, dtype=np.int64)
    no_rows = np.zeros((n, 0), dtype=np.int32)
    no_cnt = np.zeros(n, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int32)

    for it in range(params.max_iters):
        K.sample_rows(g.ids, g.flags, lam, True, new, new_cnt, old, old_cnt, rnew, rnew_cnt, rold, rold_cnt)
        K.fold_reverse(new, new_cnt, rnew, rnew_cnt, no_rows, no_cnt)
        K.fold_reverse(old, old_cnt, rold, rold_cnt, new, new_cnt)
        inserted, computed, _ = local_join(data, metric.code, labels, K.JOIN_NNDESCENT,
                                           g.ids, g.dists, g.flags, new, new_cnt, old, old_cnt,
                                           no_rows, no_cnt)
        if trace is not None:
            trace.inserts.append(inserted)
            trace.dist_counts.append(computed)
            if trace.check:
                try:
                    g.validate()
                except InvalidInputError:
                    trace.violations["row_invariants"] += 1
            if trace.on_iteration is not None:
                trace.on_iteration(it, g)
        if inserted < params.delta * n * k:
            break
    return g


def insertion_count(trace: Trace) -> int:
    """Successful inserts made by the most recent iteration of a traced build."""
    return trace.insertion_count()
