import numpy as np
import pytest

from knnmerge.core import KnnGraph, SubsetMap, concat_graphs, merge_graph_rows
from knnmerge.datasets import VectorSet, partition, synth_dataset
from knnmerge.errors import InvalidInputError
from knnmerge.evaluation import brute_force_knn, recall_at_k
from knnmerge.merge import (MergeParams, build_sample_graph, hierarchical_merge, multi_way_merge, to_global,
                            two_way_merge, two_way_merge_full)
from knnmerge.nndescent import NNDescentParams, nn_descent_build
from knnmerge.trace import Trace

from conftest import graph_from_rows


def _split(n, d, m, k, seed, clusters=4):
    C = synth_dataset(n, d, clusters, seed)
    subsets, smap = partition(C, m)
    graphs = [nn_descent_build(s, NNDescentParams(k, min(10, k), seed=seed + i)) for i, s in enumerate(subsets)]
    return C, subsets, graphs


# -- sample graph -----------------------------------------------------------

def test_sample_under_cap_keeps_forward_and_reverse():
    g = graph_from_rows([[(1, 0.1), (2, 0.2), (3, 0.3)], [(0, 0.1)], [(0, 0.2)], [(2, 0.5)]], 3)
    S = build_sample_graph(g, 5)
    assert set(S.row(0).ids) == {1, 2, 3}
    assert set(S.row(2).ids) == {0, 3}


def test_sample_dedups_forward_reverse_overlap():
    g = graph_from_rows([[(1, 0.1)], [(0, 0.1)]], 1)
    S = build_sample_graph(g, 1)
    assert S.row(0).ids == [1] and S.row(1).ids == [0]


def test_sample_members_are_forward_or_reverse(rng):
    n, k = 500, 12
    rows = []
    for i in range(n):
        ids = rng.choice([j for j in range(n) if j != i], size=k, replace=False)
        rows.append(sorted(((int(j), float(rng.random())) for j in ids), key=lambda t: (t[1], t[0])))
    g0 = graph_from_rows(rows, k)
    S = build_sample_graph(g0, 10)
    fwd = [set(g0.row(i).ids) for i in range(n)]
    for i in range(n):
        for j in S.row(i).ids:
            assert j in fwd[i] or i in fwd[j]
        assert len(S.row(i)) <= 20


# -- two-way ----------------------------------------------------------------

def test_mirrored_four_point_sets_cross_only():
    base = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.float32)
    C1, C2 = VectorSet(base), VectorSet(-base - 0.5, 4)
    g1 = nn_descent_build(C1, NNDescentParams(3, 3, seed=1))
    g2 = nn_descent_build(C2, NNDescentParams(3, 3, seed=2))
    cross = two_way_merge(C1, C2, g1, g2, MergeParams(3, 3, seed=0))
    for i in range(8):
        ids = cross.row(i).ids
        assert ids and all((j >= 4) != (i >= 4) for j in ids)


def test_zero_iterations_returns_subgraphs():
    C, subsets, graphs = _split(600, 8, 2, 10, 3)
    p = MergeParams(10, 5, max_iters=0)
    out = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p)
    g0 = concat_graphs(graphs, SubsetMap.contiguous([s.n for s in subsets]))
    assert out.same_as(g0.resized(10))


def test_rows_mix_subsets_unless_dominated():
    C, subsets, graphs = _split(2000, 8, 2, 10, 5, clusters=3)
    p = MergeParams(10, 10, seed=4)
    out = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p)
    out.validate()
    gt = brute_force_knn(C, k=10)
    n1 = subsets[0].n
    side = lambda ids: np.asarray(ids) >= n1
    # wherever the true neighborhood spans both subsets, so does the merged row
    checked = 0
    for i in range(C.n):
        truth = side(gt.ids[i])
        if truth.any() and not truth.all():
            got = side(out.row(i).ids)
            assert got.any() and not got.all()
            checked += 1
    assert checked > 0
    assert recall_at_k(out, gt, 10) > 0.97


def test_two_way_audit_and_distance_bound():
    C, subsets, graphs = _split(3000, 8, 2, 10, 7)
    p = MergeParams(10, 6, seed=1)
    tr = Trace(check=True)
    two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p, trace=tr)
    assert not tr.all_violations()
    assert tr.max_reverse <= p.lam
    assert max(tr.dist_counts) <= C.n * (2 * p.lam) ** 2


def test_two_way_seeded_deterministic():
    C, subsets, graphs = _split(1500, 8, 2, 10, 8)
    p = MergeParams(10, 6, seed=3)
    a = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p)
    b = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p)
    assert a.same_as(b)


def test_input_errors():
    C, subsets, graphs = _split(400, 8, 2, 10, 9)
    p = MergeParams(10, 5)
    with pytest.raises(InvalidInputError):
        two_way_merge(subsets[0].slice(0, 100), subsets[1], graphs[0], graphs[1], p)
    with pytest.raises(InvalidInputError):
        two_way_merge(subsets[0], subsets[0], graphs[0], graphs[0], p)
    with pytest.raises(InvalidInputError):
        two_way_merge(subsets[0], subsets[1], graphs[0], graphs[1], MergeParams(5, 5))
    other = VectorSet(np.zeros((subsets[1].n, 3)), subsets[1].id_base)
    with pytest.raises(InvalidInputError):
        two_way_merge(subsets[0], other, graphs[0], graphs[1], p)
    with pytest.raises(InvalidInputError):
        MergeParams(10, 11)


# -- multi-way and hierarchy --------------------------------------------------

def test_multi_way_m2_close_to_two_way():
    C, subsets, graphs = _split(3000, 8, 2, 10, 11)
    p = MergeParams(10, 8, seed=2)
    gt = brute_force_knn(C, k=10)
    r2 = recall_at_k(two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p), gt, 10)
    rm = recall_at_k(multi_way_merge(subsets, graphs, p), gt, 10)
    assert abs(r2 - rm) <= 0.005


def test_multi_way_audit_and_distance_bound():
    C, subsets, graphs = _split(3000, 8, 4, 10, 12)
    p = MergeParams(10, 6, seed=5)
    tr = Trace(check=True)
    out = multi_way_merge(subsets, graphs, p, trace=tr)
    out.validate()
    assert not tr.all_violations()
    assert max(tr.dist_counts) <= 3 * C.n * (2 * p.lam) ** 2


def test_multi_way_needs_two():
    C, subsets, graphs = _split(300, 8, 2, 5, 13)
    with pytest.raises(InvalidInputError):
        multi_way_merge(subsets[:1], graphs[:1], MergeParams(5, 5))


@pytest.mark.parametrize("m,calls", [(2, 1), (3, 2), (4, 3), (5, 4)])
def test_hierarchical_call_count(m, calls):
    C, subsets, graphs = _split(200 * m, 6, m, 6, 20 + m)
    tr = Trace()
    out = hierarchical_merge(subsets, graphs, MergeParams(6, 6, seed=1), trace=tr)
    assert tr.merge_calls == calls == m - 1
    out.validate()


def test_hierarchical_m3_promotes_last():
    C, subsets, graphs = _split(900, 6, 3, 6, 30)
    p = MergeParams(6, 6, seed=4)
    first = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p)
    u = VectorSet(np.vstack([subsets[0].data, subsets[1].data]))
    expect = two_way_merge_full(u, subsets[2], first, graphs[2], p.with_seed(p.seed + 1))
    assert hierarchical_merge(subsets, graphs, p).same_as(expect)


def test_hierarchical_m2_equals_two_way():
    C, subsets, graphs = _split(800, 6, 2, 6, 31)
    p = MergeParams(6, 6, seed=4)
    assert hierarchical_merge(subsets, graphs, p).same_as(
        two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p))


def test_merge_output_is_union_of_cross_and_subgraphs():
    C, subsets, graphs = _split(800, 6, 2, 8, 32)
    p = MergeParams(8, 6, seed=1)
    cross = two_way_merge(subsets[0], subsets[1], graphs[0], graphs[1], p)
    g0 = concat_graphs(graphs, SubsetMap.contiguous([s.n for s in subsets]))
    full = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p)
    assert full.same_as(merge_graph_rows(cross, g0, 8))


def test_shuffled_subsets_map_back_to_global_ids():
    C = synth_dataset(1500, 8, 4, 40)
    subsets, smap = partition(C, 3, "shuffled", seed=2)
    graphs = [nn_descent_build(s, NNDescentParams(10, 8, seed=i)) for i, s in enumerate(subsets)]
    out = to_global(multi_way_merge(subsets, graphs, MergeParams(10, 8, seed=1)), subsets)
    out.validate()
    assert recall_at_k(out, brute_force_knn(C, k=10), 10) > 0.97
