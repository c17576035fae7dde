"""Numba kernels shared by the graph builders.

A graph is three parallel ``(n, k)`` arrays: ``ids`` (int32, ``-1`` marks an
empty slot), ``dists`` (float32, ``+inf`` when empty) and ``flags`` (bool,
``True`` = not yet sampled). Valid entries form a prefix ordered by
``(dist, id)``.
"""

import numba
import numpy as np
from numba import njit, prange

# parallel kernels are entered from several threads at once (cluster simulator),
# which the default workqueue layer does not support
numba.config.THREADING_LAYER = "omp"

SQEUCLIDEAN = 0
EUCLIDEAN = 1
COSINE = 2

# local-join modes
JOIN_NNDESCENT = 0
JOIN_TWO_WAY = 1
JOIN_MULTI_WAY = 2


@njit(cache=True, nogil=True)
def pair_distance(x, y, metric):
    if metric == COSINE:
        dot = 0.0
        nx = 0.0
        ny = 0.0
        for j in range(x.shape[0]):
            a = np.float64(x[j])
            b = np.float64(y[j])
            dot += a * b
            nx += a * a
            ny += b * b
        if nx == 0.0 or ny == 0.0:
            return 0.0 if nx == ny else 1.0
        d = 1.0 - dot / np.sqrt(nx * ny)
        return d if d > 0.0 else 0.0
    s = 0.0
    for j in range(x.shape[0]):
        t = np.float64(x[j]) - np.float64(y[j])
        s += t * t
    if metric == EUCLIDEAN:
        return np.sqrt(s)
    return s


@njit(cache=True, nogil=True, inline="always")
def precedes(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(cache=True, nogil=True)
def row_insert(ids, dists, flags, owner, cid, cd, cflag):
    """Insert ``(cid, cd)`` into one sorted bounded row; True iff the row changed."""
    k = ids.shape[0]
    if k == 0 or cid == owner or cid < 0:
        return False
    last = ids[k - 1]
    if last >= 0 and not precedes(cd, cid, dists[k - 1], last):
        return False
    pos = -1
    for j in range(k):
        e = ids[j]
        if e < 0:
            if pos < 0:
                pos = j
            break
        if e == cid:
            return False
        if pos < 0 and precedes(cd, cid, dists[j], e):
            pos = j
    for j in range(k - 1, pos, -1):
        ids[j] = ids[j - 1]
        dists[j] = dists[j - 1]
        flags[j] = flags[j - 1]
    ids[pos] = cid
    dists[pos] = cd
    flags[pos] = cflag
    return True


@njit(cache=True, nogil=True)
def row_count(ids):
    c = 0
    for j in range(ids.shape[0]):
        if ids[j] < 0:
            break
        c += 1
    return c


@njit(cache=True, nogil=True)
def merge_rows(aid, ad, af, bid, bd, bf, oid, od, of):
    """Exact top-k union of two sorted rows into ``o*``; duplicates keep the smaller dist."""
    k = oid.shape[0]
    na = row_count(aid)
    nb = row_count(bid)
    ia = 0
    ib = 0
    n = 0
    while n < k and (ia < na or ib < nb):
        if ib >= nb or (ia < na and not precedes(bd[ib], bid[ib], ad[ia], aid[ia])):
            c = aid[ia]
            d = ad[ia]
            f = af[ia]
            ia += 1
        else:
            c = bid[ib]
            d = bd[ib]
            f = bf[ib]
            ib += 1
        dup = False
        for j in range(n):
            if oid[j] == c:
                dup = True
                break
        if not dup:
            oid[n] = c
            od[n] = d
            of[n] = f
            n += 1
    for j in range(n, k):
        oid[j] = -1
        od[j] = np.inf
        of[j] = False


@njit(cache=True, parallel=True)
def merge_graphs(aid, ad, af, bid, bd, bf, oid, od, of):
    for i in prange(oid.shape[0]):
        merge_rows(aid[i], ad[i], af[i], bid[i], bd[i], bf[i], oid[i], od[i], of[i])


@njit(cache=True)
def reverse_rows(ids, dists, rid, rd, rf):
    n = ids.shape[0]
    for i in range(n):
        for j in range(ids.shape[1]):
            u = ids[i, j]
            if u < 0:
                break
            row_insert(rid[u], rd[u], rf[u], u, i, dists[i, j], False)


@njit(cache=True)
def fill_from_candidates(data, metric, cand, owner_ids, want, ids, dists, flags, exclude_self):
    """Fill each row with up to ``want[i]`` distinct candidates, computing distances.

    ``owner_ids[i]`` is the element index row ``i`` belongs to. Returns the number
    of distinct ids placed per row.
    """
    n = cand.shape[0]
    placed = np.zeros(n, dtype=np.int64)
    for i in range(n):
        o = owner_ids[i]
        c = 0
        for j in range(cand.shape[1]):
            if c >= want[i]:
                break
            u = cand[i, j]
            if exclude_self and u == o:
                continue
            seen = False
            for t in range(c):
                if ids[i, t] == u:
                    seen = True
                    break
            if seen:
                continue
            ids[i, c] = u
            c += 1
        for t in range(c):
            dists[i, t] = np.float32(pair_distance(data[o], data[ids[i, t]], metric))
            flags[i, t] = True
        placed[i] = c
    return placed


@njit(cache=True)
def sort_rows(ids, dists, flags):
    """Sort each row's valid prefix by (dist, id)."""
    for i in range(ids.shape[0]):
        c = row_count(ids[i])
        for a in range(1, c):
            ti = ids[i, a]
            td = dists[i, a]
            tf = flags[i, a]
            b = a - 1
            while b >= 0 and precedes(td, ti, dists[i, b], ids[i, b]):
                ids[i, b + 1] = ids[i, b]
                dists[i, b + 1] = dists[i, b]
                flags[i, b + 1] = flags[i, b]
                b -= 1
            ids[i, b + 1] = ti
            dists[i, b + 1] = td
            flags[i, b + 1] = tf


@njit(cache=True)
def sample_rows(ids, flags, lam, with_old, new, new_cnt, old, old_cnt, rnew, rnew_cnt, rold, rold_cnt):
    """Collect up to ``lam`` true-flagged (closest first) items per row into ``new``.

    Sampled items are flagged false. With ``with_old``, up to ``lam`` items that
    were already false go to ``old``. Each sampled ``u`` registers the row owner
    into ``rnew[u]`` / ``rold[u]`` while that entry holds fewer than ``lam``.
    Rows are visited in id order so the reverse-cache fill is first-come.
    """
    n = ids.shape[0]
    for i in range(n):
        cn = 0
        co = 0
        for j in range(ids.shape[1]):
            u = ids[i, j]
            if u < 0:
                break
            if flags[i, j]:
                if cn < lam:
                    new[i, cn] = u
                    cn += 1
                    flags[i, j] = False
                    if rnew_cnt[u] < lam:
                        rnew[u, rnew_cnt[u]] = i
                        rnew_cnt[u] += 1
            elif with_old and co < lam:
                old[i, co] = u
                co += 1
                if rold_cnt[u] < lam:
                    rold[u, rold_cnt[u]] = i
                    rold_cnt[u] += 1
        new_cnt[i] = cn
        if with_old:
            old_cnt[i] = co


@njit(cache=True)
def fold_reverse(lst, cnt, rev, rev_cnt, other, other_cnt):
    """Append ``rev[i]`` into ``lst[i]`` skipping ids already in ``lst[i]`` or ``other[i]``; clear ``rev``."""
    for i in range(lst.shape[0]):
        c = cnt[i]
        for r in range(rev_cnt[i]):
            u = rev[i, r]
            dup = False
            for t in range(c):
                if lst[i, t] == u:
                    dup = True
                    break
            if not dup:
                for t in range(other_cnt[i]):
                    if other[i, t] == u:
                        dup = True
                        break
            if not dup and c < lst.shape[1]:
                lst[i, c] = u
                c += 1
        cnt[i] = c
        rev_cnt[i] = 0


@njit(cache=True, parallel=True)
def local_join(data, metric, labels, mode, new, new_cnt, old, old_cnt, S, S_cnt,
               thr, lo, hi, out_t, out_i, out_d, out_n, dcount, viol):
    """Generate candidate updates for rows ``lo:hi`` without touching the graph.

    Update ``(t, i, d)`` proposes inserting ``i`` at distance ``d`` into row ``t``.
    Only proposals that could enter the row given the current worst distance
    ``thr[t]`` are emitted. ``viol`` counts distances computed between two
    members of the same subset in the merge modes (must stay zero).
    """
    for r in prange(hi - lo):
        i = lo + r
        c = 0
        nd = 0
        nv = 0
        nn = new_cnt[i]
        if mode == JOIN_NNDESCENT:
            for a in range(nn):
                v = new[i, a]
                for b in range(a + 1, nn + old_cnt[i]):
                    if b < nn:
                        u = new[i, b]
                    else:
                        u = old[i, b - nn]
                    if u == v:
                        continue
                    d = np.float32(pair_distance(data[u], data[v], metric))
                    nd += 1
                    if d <= thr[v]:
                        out_t[r, c] = v
                        out_i[r, c] = u
                        out_d[r, c] = d
                        c += 1
                    if d <= thr[u]:
                        out_t[r, c] = u
                        out_i[r, c] = v
                        out_d[r, c] = d
                        c += 1
        else:
            ns = S_cnt[i]
            for a in range(nn):
                v = new[i, a]
                lv = labels[v]
                extra = 0
                if mode == JOIN_MULTI_WAY:
                    extra = nn + old_cnt[i]
                for b in range(ns + extra):
                    if b < ns:
                        u = S[i, b]
                    elif b < ns + nn:
                        u = new[i, b - ns]
                        if u == v or labels[u] == lv:
                            continue
                    else:
                        u = old[i, b - ns - nn]
                        if u == v or labels[u] == lv:
                            continue
                    if labels[u] == lv:
                        nv += 1
                        continue
                    d = np.float32(pair_distance(data[u], data[v], metric))
                    nd += 1
                    if d <= thr[v]:
                        out_t[r, c] = v
                        out_i[r, c] = u
                        out_d[r, c] = d
                        c += 1
                    if d <= thr[u]:
                        out_t[r, c] = u
                        out_i[r, c] = v
                        out_d[r, c] = d
                        c += 1
        out_n[r] = c
        dcount[r] = nd
        viol[r] = nv


@njit(cache=True, parallel=True)
def apply_updates(ids, dists, flags, out_t, out_i, out_d, out_n, nstripes):
    """Apply generated updates; rows are striped over workers so no two write one row.

    Within a row, updates are applied in generation order, so the result does
    not depend on the number of stripes.
    """
    res = np.zeros(nstripes, dtype=np.int64)
    for s in prange(nstripes):
        c = 0
        for r in range(out_n.shape[0]):
            for e in range(out_n[r]):
                t = out_t[r, e]
                if t % nstripes == s:
                    if row_insert(ids[t], dists[t], flags[t], t, out_i[r, e], out_d[r, e], True):
                        c += 1
        res[s] = c
    return res.sum()


@njit(cache=True)
def distinct_random_fill(cand, want, exclude, out, out_cnt):
    """Take the first ``want`` distinct candidates per row, skipping ``exclude[i]``."""
    for i in range(cand.shape[0]):
        c = 0
        for j in range(cand.shape[1]):
            if c >= want:
                break
            u = cand[i, j]
            if u == exclude[i]:
                continue
            dup = False
            for t in range(c):
                if out[i, t] == u:
                    dup = True
                    break
            if not dup:
                out[i, c] = u
                c += 1
        out_cnt[i] = c
