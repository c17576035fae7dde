"""Exact ground truth, recall, and search sweeps."""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence, TextIO

import numpy as np
from numba import njit, prange

from . import _kernels
from .core import KnnGraph, Metric, as_metric
from .datasets import VectorSet
from .errors import InvalidInputError
from .index import IndexGraph, Searcher

_SLACK = 8  # extra candidates re-ranked exactly after the fast pass


@njit(cache=True, parallel=True)
def _exact(tgt, base, cand, metric):
    out = np.empty(cand.shape, dtype=np.float32)
    for r in prange(cand.shape[0]):
        for j in range(cand.shape[1]):
            out[r, j] = np.float32(_kernels.pair_distance(tgt[r], base[cand[r, j]], metric))
    return out


@dataclass
class GroundTruth:
    ids: np.ndarray
    dists: np.ndarray

    @property
    def depth(self) -> int:
        return self.ids.shape[1]


@dataclass
class EvalRow:
    label: str
    k: int
    recall_at_10: float | None = None
    recall_at_100: float | None = None
    seconds: float | None = None
    dist_comps: int | None = None
    qps: float | None = None


CSV_COLUMNS = [f.name for f in fields(EvalRow)]


def write_csv(rows: Iterable[EvalRow], out: TextIO = sys.stdout, header: bool = True) -> None:
    w = csv.DictWriter(out, fieldnames=CSV_COLUMNS)
    if header:
        w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in asdict(r).items()})


def _data(C) -> np.ndarray:
    return C.data if isinstance(C, VectorSet) else np.ascontiguousarray(C, dtype=np.float32)


def _block_scores(base: np.ndarray, tgt: np.ndarray, metric: Metric) -> np.ndarray:
    # rank-equivalent fast scores: squared L2 or (1 - cosine similarity)
    if metric.kind == "cosine":
        bn = base / np.maximum(np.linalg.norm(base, axis=1, keepdims=True), 1e-300)
        tn = tgt / np.maximum(np.linalg.norm(tgt, axis=1, keepdims=True), 1e-300)
        return 1.0 - tn @ bn.T
    return (tgt * tgt).sum(1)[:, None] + (base * base).sum(1)[None, :] - 2.0 * tgt @ base.T


def brute_force_knn(C, targets=None, k: int = 100, metric: Metric | str | None = None,
                    block: int = 1024) -> GroundTruth:
    """Exact top-``k`` neighbors per target, ties broken by ascending id.

    When ``targets`` is omitted the targets are ``C`` itself and each element
    is excluded from its own list. A fast matrix pass preselects candidates;
    the survivors are re-ranked with the same distance kernel the builders use.
    """
    metric = as_metric(metric)
    base = _data(C)
    self_join = targets is None
    tgt = base if self_join else _data(targets)
    n = base.shape[0]
    limit = n - 1 if self_join else n
    if not 1 <= k <= limit:
        raise InvalidInputError(f"K={k} out of range [1, {limit}]")
    nt = tgt.shape[0]
    out_ids = np.empty((nt, k), dtype=np.int32)
    out_d = np.empty((nt, k), dtype=np.float32)
    base64 = base.astype(np.float64)
    width = min(limit, k + _SLACK)
    for lo in range(0, nt, block):
        hi = min(nt, lo + block)
        S = _block_scores(base64, tgt[lo:hi].astype(np.float64), metric)
        if self_join:
            S[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        if width < n:
            cand = np.argpartition(S, width - 1, axis=1)[:, :width].astype(np.int32)
        else:
            cand = np.tile(np.arange(n, dtype=np.int32), (hi - lo, 1))
        d = _exact(tgt[lo:hi], base, cand, metric.code)
        order = np.lexsort((cand, d), axis=1)[:, :k]
        out_ids[lo:hi] = np.take_along_axis(cand, order, axis=1)
        out_d[lo:hi] = np.take_along_axis(d, order, axis=1)
    return GroundTruth(out_ids, out_d)


def recall_at_k(g: KnnGraph | np.ndarray, gt: GroundTruth | np.ndarray, k: int) -> float:
    """Recall@k = sum_i |top-k(row i) ∩ true top-k(i)| / (n * k); short rows count missing slots as misses."""
    ids = g.ids if isinstance(g, KnnGraph) else np.asarray(g)
    truth = gt.ids if isinstance(gt, GroundTruth) else np.asarray(gt)
    if truth.shape[1] < k:
        raise InvalidInputError(f"ground truth depth {truth.shape[1]} < k={k}")
    if ids.shape[0] != truth.shape[0]:
        raise InvalidInputError(f"{ids.shape[0]} rows vs {truth.shape[0]} ground-truth rows")
    n = ids.shape[0]
    if n == 0:
        return 1.0
    width = min(k, ids.shape[1])
    hits = 0
    for lo in range(0, n, 2048):
        a = ids[lo : lo + 2048, :width]
        b = truth[lo : lo + 2048, :k]
        match = (a[:, :, None] == b[:, None, :]) & (a >= 0)[:, :, None]
        hits += int(match.any(axis=2).sum())
    return hits / (n * k)


def graph_eval_row(label: str, g: KnnGraph, gt: GroundTruth, seconds: float | None = None,
                   dist_comps: int | None = None) -> EvalRow:
    r10 = recall_at_k(g, gt, 10) if gt.depth >= 10 and g.k >= 1 else None
    r100 = recall_at_k(g, gt, 100) if gt.depth >= 100 and g.k >= 100 else None
    return EvalRow(label, g.k, r10, r100, seconds, dist_comps)


def eval_search(C, idx: IndexGraph, queries, gt: GroundTruth, ef_list: Sequence[int], k: int = 10,
                metric: Metric | str | None = None, label: str = "search") -> list[EvalRow]:
    """One row per beam width: mean recall, single-threaded QPS and distance computations."""
    if any(ef < k for ef in ef_list):
        raise InvalidInputError(f"every ef must be >= k={k}")
    q = _data(queries)
    searcher = Searcher(C, idx, metric)
    if q.shape[0]:
        searcher.search(q[0], max(ef_list, default=k), k)  # compile outside the timed loop
    rows = []
    for ef in ef_list:
        found = np.empty((q.shape[0], k), dtype=np.int32)
        comps = 0
        t0 = time.perf_counter()
        for i in range(q.shape[0]):
            ids, _, nd = searcher.search(q[i], ef, k)
            found[i, : ids.shape[0]] = ids
            found[i, ids.shape[0] :] = -1
            comps += nd
        elapsed = time.perf_counter() - t0
        rows.append(EvalRow(
            f"{label}/ef={ef}", k,
            recall_at_k(found, gt, 10) if k >= 10 else None,
            recall_at_k(found, gt, 100) if k >= 100 else None,
            elapsed, comps, q.shape[0] / elapsed if elapsed > 0 else float("inf"),
        ))
    return rows
