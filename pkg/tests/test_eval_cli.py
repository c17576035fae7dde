import csv
import io
import socket
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knnmerge import cli
from knnmerge.core import KnnGraph
from knnmerge.datasets import VectorSet, read_graph, read_vecs, synth_dataset
from knnmerge.errors import InvalidInputError
from knnmerge.evaluation import (CSV_COLUMNS, EvalRow, GroundTruth, brute_force_knn, eval_search, recall_at_k,
                                 write_csv)
from knnmerge.index import DiversifyParams, incremental_build

from conftest import quadratic_knn


# -- ground truth -----------------------------------------------------------

def test_collinear_middle_point():
    C = np.array([[0.0], [1.0], [3.0]], dtype=np.float32)
    assert brute_force_knn(C, k=1).ids[1, 0] == 0


def test_full_ranking():
    C = synth_dataset(30, 3, 2, 1)
    gt = brute_force_knn(C, k=29)
    for i in range(30):
        assert sorted(gt.ids[i].tolist()) == [j for j in range(30) if j != i]
        assert np.all(np.diff(gt.dists[i]) >= 0)


def test_agrees_with_quadratic_loop():
    C = synth_dataset(200, 6, 3, 2)
    assert np.array_equal(brute_force_knn(C, k=15).ids, quadratic_knn(C.data, C.data, 15, True))
    Q = synth_dataset(40, 6, 3, 3)
    assert np.array_equal(brute_force_knn(C, Q, k=15).ids, quadratic_knn(C.data, Q.data, 15, False))


def test_ties_broken_by_id():
    C = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.float32)
    assert brute_force_knn(C, k=4).ids[0].tolist() == [1, 2, 3, 4]


def test_k_out_of_range():
    C = np.zeros((5, 2), dtype=np.float32)
    with pytest.raises(InvalidInputError):
        brute_force_knn(C, k=5)
    with pytest.raises(InvalidInputError):
        brute_force_knn(C, k=0)


# -- recall -----------------------------------------------------------------

def test_recall_identity_and_count():
    gt = GroundTruth(np.array([[1, 2, 3]]), np.zeros((1, 3)))
    assert recall_at_k(np.array([[1, 2, 3]]), gt, 3) == 1.0
    assert recall_at_k(np.array([[1, 5, 3]]), gt, 3) == pytest.approx(2 / 3)


def test_recall_short_rows_count_as_misses():
    gt = np.array([[1, 2, 3]])
    assert recall_at_k(np.array([[1, -1, -1]]), gt, 3) == pytest.approx(1 / 3)
    assert recall_at_k(np.array([[1]]), gt, 3) == pytest.approx(1 / 3)


def test_recall_depth_mismatch():
    with pytest.raises(InvalidInputError):
        recall_at_k(np.array([[1, 2, 3]]), np.array([[1, 2]]), 3)


@given(st.integers(0, 1000), st.integers(1, 8))
def test_recall_invariant_under_permutation(seed, k):
    rng = np.random.default_rng(seed)
    n = 20
    truth = np.array([rng.choice(50, size=10, replace=False) for _ in range(n)])
    got = np.array([rng.choice(50, size=10, replace=False) for _ in range(n)])
    r = recall_at_k(got, truth, k)
    assert 0.0 <= r <= 1.0
    perm = got.copy()
    for row in perm:
        rng.shuffle(row[:k])
    assert recall_at_k(perm, truth, k) == r
    assert recall_at_k(truth, truth, k) == 1.0


# -- search sweeps ------------------------------------------------------------

@pytest.fixture(scope="module")
def small_index():
    C = synth_dataset(400, 6, 3, 4)
    Q = synth_dataset(50, 6, 3, 5)
    return C, Q, incremental_build(C, DiversifyParams(1.0, 10), 48), brute_force_knn(C, Q, k=10)


def test_exhaustive_ef_recall_one(small_index):
    C, Q, idx, gt = small_index
    (row,) = eval_search(C, idx, Q, gt, [C.n], 10)
    assert row.recall_at_10 == 1.0


def test_recall_non_decreasing_in_ef(small_index):
    C, Q, idx, gt = small_index
    rows = eval_search(C, idx, Q, gt, [10, 16, 32, 64, 128], 10)
    rec = [r.recall_at_10 for r in rows]
    assert rec == sorted(rec)
    comps = [r.dist_comps for r in rows]
    assert comps == sorted(comps)


def test_search_deterministic(small_index):
    C, Q, idx, gt = small_index
    a = eval_search(C, idx, Q, gt, [16, 32], 10)
    b = eval_search(C, idx, Q, gt, [16, 32], 10)
    assert [(r.recall_at_10, r.dist_comps) for r in a] == [(r.recall_at_10, r.dist_comps) for r in b]


def test_ef_below_k_rejected(small_index):
    C, Q, idx, gt = small_index
    with pytest.raises(InvalidInputError):
        eval_search(C, idx, Q, gt, [5], 10)


def test_csv_columns():
    buf = io.StringIO()
    write_csv([EvalRow("x", 10, 0.5, None, 1.0, 7, None)], buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert list(rows[0]) == CSV_COLUMNS == ["label", "k", "recall_at_10", "recall_at_100", "seconds", "dist_comps",
                                            "qps"]
    assert rows[0]["recall_at_100"] == ""


# -- CLI --------------------------------------------------------------------

def _csv(out):
    return list(csv.DictReader(io.StringIO(out)))


def test_gt_then_recall_is_one(tmp_path, capsys):
    d = tmp_path
    assert cli.main(["synth", "--n", "500", "--d", "8", "--clusters", "4", "--seed", "1", "--out", str(d / "c.fvecs")]) == 0
    assert cli.main(["gt", "--input", str(d / "c.fvecs"), "--k", "100", "--out", str(d / "gt.ivecs")]) == 0
    capsys.readouterr()
    assert cli.main(["recall", "--graph", str(d / "gt.ivecs"), "--gt", str(d / "gt.ivecs")]) == 0
    row = _csv(capsys.readouterr().out)[0]
    assert float(row["recall_at_10"]) == 1.0 and float(row["recall_at_100"]) == 1.0


def test_pipeline_merge2(tmp_path, capsys):
    d = str(tmp_path)
    run = lambda *a: cli.main([str(x) for x in a])
    assert run("synth", "--n", 3000, "--d", 16, "--clusters", 8, "--seed", 2, "--out", f"{d}/c.fvecs") == 0
    assert run("gt", "--input", f"{d}/c.fvecs", "--k", 10, "--out", f"{d}/gt.ivecs") == 0
    assert run("partition", "--input", f"{d}/c.fvecs", "--m", 2, "--out-prefix", f"{d}/p") == 0
    for i in range(2):
        assert run("build-nnd", "--input", f"{d}/p_{i}.fvecs", "--k", 20, "--lam", 10, "--seed", i,
                   "--out", f"{d}/g{i}.knng", "--threads", 1) == 0
    assert run("merge2", "--subsets", f"{d}/p_0.fvecs", f"{d}/p_1.fvecs", "--graphs", f"{d}/g0.knng",
               f"{d}/g1.knng", "--k", 20, "--lam", 10, "--out", f"{d}/m.knng", "--gt", f"{d}/gt.ivecs") == 0
    g = read_graph(f"{d}/m.knng")
    g.validate()
    assert g.n == 3000
    capsys.readouterr()
    assert run("recall", "--graph", f"{d}/m.knng", "--gt", f"{d}/gt.ivecs") == 0
    assert float(_csv(capsys.readouterr().out)[0]["recall_at_10"]) >= 0.9


def test_shuffled_partition_merge(tmp_path, capsys):
    d = str(tmp_path)
    run = lambda *a: cli.main([str(x) for x in a])
    run("synth", "--n", 1200, "--d", 8, "--seed", 3, "--out", f"{d}/c.fvecs")
    run("gt", "--input", f"{d}/c.fvecs", "--k", 10, "--out", f"{d}/gt.ivecs")
    assert run("partition", "--input", f"{d}/c.fvecs", "--m", 3, "--strategy", "shuffled", "--seed", 1,
               "--out-prefix", f"{d}/p") == 0
    for i in range(3):
        run("build-nnd", "--input", f"{d}/p_{i}.fvecs", "--k", 10, "--out", f"{d}/g{i}.knng")
    capsys.readouterr()
    assert run("mergeN", "--subsets", *[f"{d}/p_{i}.fvecs" for i in range(3)],
               "--graphs", *[f"{d}/g{i}.knng" for i in range(3)], "--k", 10, "--out", f"{d}/m.knng",
               "--gt", f"{d}/gt.ivecs") == 0
    assert float(_csv(capsys.readouterr().out)[0]["recall_at_10"]) >= 0.9


def test_index_commands(tmp_path, capsys):
    d = str(tmp_path)
    run = lambda *a: cli.main([str(x) for x in a])
    run("synth", "--n", 1000, "--d", 8, "--seed", 4, "--out", f"{d}/c.fvecs", "--queries", 50,
        "--queries-out", f"{d}/q.fvecs")
    run("partition", "--input", f"{d}/c.fvecs", "--m", 2, "--out-prefix", f"{d}/p")
    for i in range(2):
        assert run("build-index", "--input", f"{d}/p_{i}.fvecs", "--max-degree", 16, "--out", f"{d}/i{i}.idx") == 0
    assert run("merge-index", "--subsets", f"{d}/p_0.fvecs", f"{d}/p_1.fvecs", "--indexes", f"{d}/i0.idx",
               f"{d}/i1.idx", "--out", f"{d}/m.idx") == 0
    run("gt", "--input", f"{d}/c.fvecs", "--queries", f"{d}/q.fvecs", "--k", 10, "--out", f"{d}/qgt.ivecs")
    capsys.readouterr()
    assert run("search-eval", "--input", f"{d}/c.fvecs", "--index", f"{d}/m.idx", "--queries", f"{d}/q.fvecs",
               "--gt", f"{d}/qgt.ivecs", "--ef", 16, 64) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 2 and float(rows[1]["recall_at_10"]) >= 0.9 and float(rows[1]["qps"]) > 0
    run("build-nnd", "--input", f"{d}/c.fvecs", "--k", 24, "--out", f"{d}/g.knng")
    assert run("diversify", "--input", f"{d}/c.fvecs", "--graph", f"{d}/g.knng", "--max-degree", 12,
               "--out", f"{d}/dv.idx") == 0
    assert read_graph(f"{d}/dv.idx").counts().max() <= 12


def test_cluster_and_spill_commands(tmp_path, capsys):
    d = str(tmp_path)
    run = lambda *a: cli.main([str(x) for x in a])
    run("synth", "--n", 1200, "--d", 8, "--seed", 5, "--out", f"{d}/c.fvecs")
    assert run("cluster-sim", "--input", f"{d}/c.fvecs", "--m", 3, "--k", 10, "--out", f"{d}/cs.knng") == 0
    assert run("spill-build", "--input", f"{d}/c.fvecs", "--m-sub", 3, "--k", 10, "--workdir", f"{d}/w",
               "--out", f"{d}/sp.knng") == 0
    assert read_graph(f"{d}/cs.knng").same_as(read_graph(f"{d}/sp.knng"))
    assert run("spill-build", "--input", f"{d}/c.fvecs", "--m-sub", 2, "--k", 10, "--budget", 1000,
               "--workdir", f"{d}/w2", "--out", f"{d}/x.knng") == 1
    assert "m_sub" in capsys.readouterr().err


def test_missing_file_and_bad_flag(tmp_path, capsys):
    assert cli.main(["recall", "--graph", str(tmp_path / "nope.knng"), "--gt", str(tmp_path / "gt.ivecs")]) != 0
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        cli.main(["gt", "--bogus"])
    assert e.value.code != 0
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_node_command_over_tcp(tmp_path):
    d = str(tmp_path)
    cli.main(["synth", "--n", "800", "--d", "8", "--seed", "6", "--out", f"{d}/c.fvecs"])
    socks = [socket.socket() for _ in range(2)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    hosts = ",".join(f"127.0.0.1:{s.getsockname()[1]}" for s in socks)
    for s in socks:
        s.close()
    procs = [subprocess.Popen([sys.executable, "-m", "knnmerge", "node", "--input", f"{d}/c.fvecs", "--node-id",
                               str(i), "--hosts", hosts, "--k", "10", "--seed", "3", "--timeout", "120",
                               "--out", f"{d}/n{i}.knng"], stderr=subprocess.PIPE) for i in range(2)]
    for p in procs:
        _, err = p.communicate(timeout=300)
        assert p.returncode == 0, err.decode()
    assert cli.main(["cluster-sim", "--input", f"{d}/c.fvecs", "--m", "2", "--k", "10", "--seed", "3",
                     "--out", f"{d}/sim.knng"]) == 0
    sim = read_graph(f"{d}/sim.knng")
    n0 = read_graph(f"{d}/n0.knng")
    n1 = read_graph(f"{d}/n1.knng")
    assert np.array_equal(np.vstack([n0.ids, n1.ids]), sim.ids)
    assert np.array_equal(np.vstack([n0.dists, n1.dists]), sim.dists)
