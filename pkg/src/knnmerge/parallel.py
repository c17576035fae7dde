"""Thread-count control and the blocked local-join driver.

Local-Join runs in two phases per block of source rows: candidate updates
are generated in parallel without touching the graph, then applied with rows
striped across workers so that each row has a single writer. The outcome is
identical for any thread count.
"""

from __future__ import annotations

import os

import numba
import numpy as np

from . import _kernels as K

ENV_THREADS = "KNNMERGE_THREADS"
_UPDATE_BUDGET = 1 << 21  # update slots allocated per block


def set_threads(n: int | None) -> int:
    """Set worker threads for parallel kernels (clamped to what numba allows)."""
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n is None or n <= 0 else min(n, limit)
    numba.set_num_threads(n)
    return n


def get_threads() -> int:
    return numba.get_num_threads()


if os.environ.get(ENV_THREADS):
    set_threads(int(os.environ[ENV_THREADS]))


def _row_capacity(mode: int, new: np.ndarray, old: np.ndarray, S: np.ndarray) -> int:
    w_new, w_old, w_s = new.shape[1], old.shape[1], S.shape[1]
    if mode == K.JOIN_NNDESCENT:
        per = w_new * (w_new + w_old)
    elif mode == K.JOIN_TWO_WAY:
        per = w_new * w_s
    else:
        per = w_new * (w_s + w_new + w_old)
    return max(1, 2 * per)


def local_join(data, metric: int, labels, mode: int, ids, dists, flags,
               new, new_cnt, old, old_cnt, S, S_cnt) -> tuple[int, int, int]:
    """Run one Local-Join pass over all rows.

    Returns ``(successful inserts, distance computations, same-subset violations)``.
    """
    n = ids.shape[0]
    cap = _row_capacity(mode, new, old, S)
    block = max(1, min(n, _UPDATE_BUDGET // cap))
    out_t = np.empty((block, cap), dtype=np.int32)
    out_i = np.empty((block, cap), dtype=np.int32)
    out_d = np.empty((block, cap), dtype=np.float32)
    out_n = np.zeros(block, dtype=np.int64)
    dcount = np.zeros(block, dtype=np.int64)
    viol = np.zeros(block, dtype=np.int64)
    thr = dists[:, -1]
    stripes = get_threads()
    inserted = computed = violations = 0
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        rows = hi - lo
        K.local_join(data, metric, labels, mode, new, new_cnt, old, old_cnt, S, S_cnt,
                     thr, lo, hi, out_t, out_i, out_d, out_n, dcount, viol)
        inserted += int(K.apply_updates(ids, dists, flags, out_t[:rows], out_i[:rows], out_d[:rows],
                                        out_n[:rows], stripes))
        computed += int(dcount[:rows].sum())
        violations += int(viol[:rows].sum())
    return inserted, computed, violations
