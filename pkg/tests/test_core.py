import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knnmerge import _kernels as K
from knnmerge.core import (KnnGraph, Metric, Neighbor, NeighborList, SubsetMap, concat_graphs, distance,
                           merge_graph_rows, merge_sorted_lists, ordered_insert, reverse_graph)
from knnmerge.errors import InvalidInputError

from conftest import graph_from_rows


def nl(owner, cap, pairs):
    return NeighborList(owner, cap, [Neighbor(i, d) for i, d in pairs])


# -- distance ---------------------------------------------------------------

def test_distance_pythagorean():
    assert distance([0, 0], [3, 4]) == 25.0
    assert distance([0, 0], [3, 4], "euclidean") == 5.0


def test_distance_identity(rng):
    x = rng.normal(size=16)
    assert distance(x, x) == 0.0
    assert distance(x, x, "cosine") == pytest.approx(0.0, abs=1e-12)


def test_distance_squared_matches_plain_summation(rng):
    for _ in range(1000):
        a, b = rng.normal(size=(2, 12))
        ref = math.fsum((float(x) - float(y)) ** 2 for x, y in zip(a, b))
        assert distance(a, b) == pytest.approx(ref, rel=1e-6)
        assert distance(a, b, "euclidean") ** 2 == pytest.approx(ref, rel=1e-6)


def test_distance_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        distance([1, 2], [1, 2, 3])


def test_unknown_metric():
    with pytest.raises(InvalidInputError):
        Metric("manhattan")


# -- ordered_insert ---------------------------------------------------------

def test_insert_examples():
    lst = nl(0, 2, [(3, 0.2), (8, 0.6)])
    assert ordered_insert(lst, Neighbor(4, 0.4))
    assert [(n.id, n.dist) for n in lst] == [(3, 0.2), (4, 0.4)]
    lst = nl(0, 2, [(3, 0.2), (8, 0.6)])
    assert not ordered_insert(lst, Neighbor(9, 0.9))
    assert lst.ids == [3, 8]
    assert not ordered_insert(lst, Neighbor(3, 0.1))
    assert [(n.id, n.dist) for n in lst] == [(3, 0.2), (8, 0.6)]


def test_insert_rejects_self_and_negative():
    lst = nl(5, 3, [])
    with pytest.raises(InvalidInputError):
        ordered_insert(lst, Neighbor(5, 0.1))
    with pytest.raises(InvalidInputError):
        ordered_insert(lst, Neighbor(1, -0.5))


def test_insert_tie_break_by_id():
    lst = nl(0, 2, [(2, 1.0), (7, 1.0)])
    assert ordered_insert(lst, Neighbor(4, 1.0))
    assert lst.ids == [2, 4]
    assert not ordered_insert(lst, Neighbor(9, 1.0))


def _insert_oracle(items, cap, owner, cand):
    if any(i == cand[0] for i, _ in items):
        return items, False
    merged = sorted(items + [cand], key=lambda t: (t[1], t[0]))[:cap]
    return merged, merged != items


def _kernel_row(items, cap):
    ids = np.full(cap, -1, np.int32)
    d = np.full(cap, np.inf, np.float32)
    f = np.zeros(cap, np.bool_)
    for j, (i, dd) in enumerate(items):
        ids[j], d[j], f[j] = i, dd, True
    return ids, d, f


def test_insert_matches_oracle_1000_cases(rng):
    for _ in range(1000):
        cap = int(rng.integers(1, 8))
        owner = 0
        pool = rng.choice(np.arange(1, 20), size=cap + 4, replace=False)
        # coarse distances so ties occur often
        items = sorted({(int(i), float(np.float32(rng.integers(0, 6) / 4))) for i in pool[: rng.integers(0, cap + 1)]},
                       key=lambda t: (t[1], t[0]))
        cand = (int(rng.choice(np.concatenate([pool, [i for i, _ in items]]))), float(np.float32(rng.integers(0, 6) / 4)))
        expect, changed = _insert_oracle(items, cap, owner, cand)

        lst = nl(owner, cap, items)
        assert ordered_insert(lst, Neighbor(*cand)) == changed
        assert [(n.id, n.dist) for n in lst] == expect

        ids, d, f = _kernel_row(items, cap)
        assert K.row_insert(ids, d, f, owner, cand[0], np.float32(cand[1]), True) == changed
        got = [(int(i), float(x)) for i, x in zip(ids, d) if i >= 0]
        assert got == expect


# -- merge_sorted_lists -----------------------------------------------------

def test_merge_example():
    out = merge_sorted_lists(nl(0, 2, [(2, 0.1), (5, 0.4)]), nl(0, 2, [(7, 0.2), (9, 0.5)]), 3)
    assert [(n.id, n.dist) for n in out] == [(2, 0.1), (7, 0.2), (5, 0.4)]


def test_merge_with_empty_truncates():
    a = nl(0, 4, [(1, 0.1), (2, 0.2), (3, 0.3)])
    assert merge_sorted_lists(a, nl(0, 4, []), 2).items == a.items[:2]


def test_merge_owner_mismatch():
    with pytest.raises(InvalidInputError):
        merge_sorted_lists(nl(0, 1, []), nl(1, 1, []), 1)


def _merge_oracle(a, b, k):
    best = {}
    for i, d in a + b:
        if i not in best or d < best[i]:
            best[i] = d
    return sorted(((i, d) for i, d in best.items()), key=lambda t: (t[1], t[0]))[:k]


def test_merge_matches_oracle_1000_cases(rng):
    for _ in range(1000):
        cap = int(rng.integers(1, 8))
        k = int(rng.integers(1, 10))

        def side():
            ids = rng.choice(np.arange(1, 16), size=int(rng.integers(0, cap + 1)), replace=False)
            return sorted(((int(i), float(np.float32(rng.integers(0, 5) / 4))) for i in ids), key=lambda t: (t[1], t[0]))

        a, b = side(), side()
        expect = _merge_oracle(a, b, k)
        out = merge_sorted_lists(nl(0, cap, a), nl(0, cap, b), k)
        assert [(n.id, n.dist) for n in out] == expect

        aid, ad, af = _kernel_row(a, cap)
        bid, bd, bf = _kernel_row(b, cap)
        oid = np.full(k, -1, np.int32)
        od = np.full(k, np.inf, np.float32)
        of = np.zeros(k, np.bool_)
        K.merge_rows(aid, ad, af, bid, bd, bf, oid, od, of)
        assert [(int(i), float(x)) for i, x in zip(oid, od) if i >= 0] == expect


@given(st.lists(st.tuples(st.integers(1, 30), st.integers(0, 8)), max_size=12),
       st.lists(st.tuples(st.integers(1, 30), st.integers(0, 8)), max_size=12),
       st.integers(1, 12))
def test_merge_is_commutative_and_sorted(a, b, k):
    def mk(pairs):
        seen = {}
        for i, d in pairs:
            seen.setdefault(i, d / 8)
        return nl(0, 12, seen.items())

    A, B = mk(a), mk(b)
    ab, ba = merge_sorted_lists(A, B, k), merge_sorted_lists(B, A, k)
    assert ab.ids == ba.ids
    keys = [n.key() for n in ab]
    assert keys == sorted(keys) and len(set(ab.ids)) == len(ab.ids) <= k


# -- graphs -----------------------------------------------------------------

def test_reverse_symmetric_pair():
    g = graph_from_rows([[(1, 1.0)], [(0, 1.0)]], 1)
    r = reverse_graph(g, 1)
    assert r.row(0).ids == [1] and r.row(1).ids == [0]


def test_reverse_cap_keeps_closer():
    g = graph_from_rows([[(2, 0.5)], [(2, 0.9)], []], 1)
    assert reverse_graph(g, 1).row(2).ids == [0]


def test_reverse_edges_exist_forward(rng):
    n, k = 100, 6
    rows = []
    for i in range(n):
        ids = rng.choice([j for j in range(n) if j != i], size=k, replace=False)
        rows.append([(int(j), float(rng.random())) for j in ids])
    g = graph_from_rows(rows, k)
    r = reverse_graph(g, 4)
    fwd = {(i, j) for i in range(n) for j in g.row(i).ids}
    for u in range(n):
        for v in r.row(u).ids:
            assert (v, u) in fwd
        assert len(r.row(u)) <= 4


def test_concat_two_small_subgraphs():
    g1 = graph_from_rows([[(1, 1.0)], [(0, 1.0)]], 1)
    g2 = graph_from_rows([[(1, 2.0)], [(0, 2.0)]], 1)
    smap = SubsetMap.contiguous([2, 2])
    out = concat_graphs([g1, g2], smap)
    assert out.n == 4
    assert out.row(2).ids == [3] and out.row(0).ids == [1]


def test_concat_single_subset_identity():
    g = graph_from_rows([[(1, 1.0)], [(0, 1.0)], [(0, 3.0)]], 1)
    assert concat_graphs([g], SubsetMap.contiguous([3])).same_as(g)


def test_concat_random_four_way_purity(rng):
    assign = rng.integers(0, 4, size=80).astype(np.int32)
    smap = SubsetMap(assign, 4)
    graphs = []
    for s in range(4):
        m = smap.members(s).shape[0]
        rows = [[(int(j), float(rng.random())) for j in rng.choice([x for x in range(m) if x != i],
                                                                    size=min(3, m - 1), replace=False)]
                for i in range(m)]
        graphs.append(graph_from_rows(rows, 3))
    out = concat_graphs(graphs, smap)
    for i in range(80):
        for j in out.row(i).ids:
            assert smap(j) == smap(i)


def test_concat_rejects_bad_sizes():
    g = graph_from_rows([[(1, 1.0)], [(0, 1.0)]], 1)
    with pytest.raises(InvalidInputError):
        concat_graphs([g, g], SubsetMap.contiguous([2, 3]))


def test_validate_catches_violations():
    g = graph_from_rows([[(1, 1.0), (2, 2.0)], [(0, 1.0)], [(0, 2.0)]], 2)
    g.validate()
    bad = g.copy()
    bad.ids[0, 0] = 0
    with pytest.raises(InvalidInputError):
        bad.validate()
    bad = g.copy()
    bad.dists[0] = [3.0, 2.0]
    with pytest.raises(InvalidInputError):
        bad.validate()
    bad = g.copy()
    bad.ids[0, 1] = 1
    bad.dists[0, 1] = 1.5
    with pytest.raises(InvalidInputError):
        bad.validate()


def test_merge_graph_rows_idempotent(rng):
    rows = [[(int(j), float(rng.random())) for j in rng.choice([x for x in range(30) if x != i], 5, replace=False)]
            for i in range(30)]
    g = graph_from_rows(rows, 5)
    assert merge_graph_rows(g, g, 5).same_as(g)
