"""Command-line entry point: ``knnmerge <command> [options]``.

Vector files are TEXMEX ``.fvecs``/``.bvecs``/``.ivecs``; graphs are
GraphFiles; ground truth is an ``.ivecs`` file of neighbor ids. Evaluation
rows go to stdout as CSV, logs to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from .core import KnnGraph, SubsetMap
from .datasets import (VectorSet, partition, read_graph, read_vecs, synth_dataset, synth_queries, write_graph,
                       write_vecs)
from .errors import ConfigError, FormatError, InvalidInputError, ProtocolError, TransportError
from .parallel import set_threads

log = logging.getLogger("knnmerge")


def _load_subset(path: str, ids_path: str | None, id_base: int) -> VectorSet:
    v = read_vecs(path)
    if ids_path and os.path.exists(ids_path):
        return VectorSet(v.data, ids=read_vecs(ids_path, "ivecs").data[:, 0].astype(np.int64))
    return VectorSet(v.data, id_base)


def _load_subsets(paths: list[str]) -> list[VectorSet]:
    """Subsets with a sibling ``.ids.ivecs`` carry explicit ids; others are taken as consecutive blocks."""
    out, base = [], 0
    for p in paths:
        s = _load_subset(p, os.path.splitext(p)[0] + ".ids.ivecs", base)
        out.append(s)
        base += s.n
    return out


def _read_gt_ids(path: str) -> np.ndarray:
    return read_vecs(path, "ivecs").data.astype(np.int32)


def _read_neighbors(path: str) -> np.ndarray:
    if path.endswith(".ivecs"):
        return _read_gt_ids(path)
    return read_graph(path).ids


def _merge_params(a):
    from .merge import MergeParams

    return MergeParams(a.k, a.lam, a.delta, a.max_iters, a.seed)


def _emit(rows) -> None:
    from .evaluation import write_csv

    write_csv(rows, sys.stdout)


def _graph_row(label: str, g: KnnGraph, gt_path: str | None, seconds: float):
    from .evaluation import EvalRow, GroundTruth, graph_eval_row

    if gt_path is None:
        return EvalRow(label, g.k, seconds=seconds)
    ids = _read_gt_ids(gt_path)
    return graph_eval_row(label, g, GroundTruth(ids, np.zeros(ids.shape, np.float32)), seconds)


# -- commands ---------------------------------------------------------------

def cmd_synth(a) -> None:
    write_vecs(a.out, synth_dataset(a.n, a.d, a.clusters, a.seed).data)
    if a.queries:
        write_vecs(a.queries_out, synth_queries(a.queries, a.d, a.clusters, a.seed).data)


def cmd_partition(a) -> None:
    subsets, smap = partition(read_vecs(a.input), a.m, a.strategy, a.seed)
    for i, s in enumerate(subsets):
        write_vecs(f"{a.out_prefix}_{i}.fvecs", s.data)
        if a.strategy != "contiguous":
            write_vecs(f"{a.out_prefix}_{i}.ids.ivecs", s.global_ids().astype(np.int32)[:, None])
    write_vecs(f"{a.out_prefix}.map.ivecs", smap.assignment[:, None])


def cmd_build_nnd(a) -> None:
    from .nndescent import NNDescentParams, nn_descent_build

    t0 = time.perf_counter()
    g = nn_descent_build(read_vecs(a.input), NNDescentParams(a.k, a.lam, a.max_iters, a.delta, a.seed), a.metric)
    write_graph(a.out, g)
    _emit([_graph_row("nn-descent", g, a.gt, time.perf_counter() - t0)])


def _merge_cmd(a, kind: str) -> None:
    from .merge import hierarchical_merge, multi_way_merge, to_global, two_way_merge_full

    subsets = _load_subsets(a.subsets)
    graphs = [read_graph(p) for p in a.graphs]
    p = _merge_params(a)
    t0 = time.perf_counter()
    if kind == "merge2":
        if len(subsets) != 2 or len(graphs) != 2:
            raise InvalidInputError("merge2 takes exactly two subsets and two graphs")
        g = two_way_merge_full(subsets[0], subsets[1], graphs[0], graphs[1], p, a.metric)
    elif kind == "mergeN":
        g = multi_way_merge(subsets, graphs, p, a.metric)
    else:
        g = hierarchical_merge(subsets, graphs, p, a.metric)
    g = to_global(g, subsets)
    write_graph(a.out, g)
    _emit([_graph_row(kind, g, a.gt, time.perf_counter() - t0)])


def cmd_diversify(a) -> None:
    from .index import DiversifyParams, diversify_graph, write_index

    idx = diversify_graph(read_vecs(a.input), read_graph(a.graph), DiversifyParams(a.alpha, a.max_degree), a.metric)
    write_index(a.out, idx)


def cmd_build_index(a) -> None:
    from .index import DiversifyParams, incremental_build, write_index

    t0 = time.perf_counter()
    idx = incremental_build(read_vecs(a.input), DiversifyParams(a.alpha, a.max_degree), a.ef_construction, a.metric)
    write_index(a.out, idx)
    log.info("index built in %.2fs", time.perf_counter() - t0)


def cmd_merge_index(a) -> None:
    from .index import DiversifyParams, merge_index_graphs, read_index, write_index
    from .merge import MergeParams, to_global

    c1, c2 = _load_subsets(a.subsets)
    i1, i2 = (read_index(p) for p in a.indexes)
    mp = MergeParams(i1.max_degree, min(a.lam, i1.max_degree), a.delta, a.max_iters, a.seed)
    idx = merge_index_graphs(c1, c2, i1, i2, mp, DiversifyParams(a.alpha, a.max_degree or i1.max_degree), a.metric)
    if c1.ids is not None or c2.ids is not None:
        g = to_global(idx.graph, [c1, c2])
        gids = np.concatenate([c1.global_ids(), c2.global_ids()])
        idx = type(idx)(g, int(gids[idx.entry_point]), idx.alpha, idx.max_degree)
    write_index(a.out, idx)


def cmd_search_eval(a) -> None:
    from .evaluation import GroundTruth, eval_search
    from .index import read_index

    set_threads(1)
    ids = _read_gt_ids(a.gt)
    gt = GroundTruth(ids, np.zeros(ids.shape, np.float32))
    rows = eval_search(read_vecs(a.input), read_index(a.index), read_vecs(a.queries), gt, a.ef, a.k, a.metric,
                       label=os.path.basename(a.index))
    _emit(rows)


def cmd_gt(a) -> None:
    from .evaluation import brute_force_knn

    C = read_vecs(a.input)
    gt = brute_force_knn(C, read_vecs(a.queries) if a.queries else None, a.k, a.metric)
    write_vecs(a.out, gt.ids)
    if a.dists_out:
        write_vecs(a.dists_out, gt.dists)


def cmd_recall(a) -> None:
    from .evaluation import EvalRow, recall_at_k

    ids = _read_neighbors(a.graph)
    truth = _read_gt_ids(a.gt)
    r = {c: recall_at_k(ids, truth, c) for c in (10, 100) if truth.shape[1] >= c and ids.shape[1] >= c}
    if a.k not in (10, 100):
        print(f"recall@{a.k}={recall_at_k(ids, truth, a.k):.6f}", file=sys.stderr)
    _emit([EvalRow(os.path.basename(a.graph), ids.shape[1], r.get(10), r.get(100))])


def cmd_cluster_sim(a) -> None:
    from .distributed.node import simulate_cluster

    t0 = time.perf_counter()
    g = simulate_cluster(read_vecs(a.input), a.m, _merge_params(a), a.metric)
    write_graph(a.out, g)
    _emit([_graph_row(f"cluster-sim/m={a.m}", g, a.gt, time.perf_counter() - t0)])


def _parse_hosts(spec: str) -> list[tuple[str, int]]:
    out = []
    for item in spec.split(","):
        host, _, port = item.strip().rpartition(":")
        if not host or not port.isdigit():
            raise InvalidInputError(f"bad host:port {item!r}")
        out.append((host, int(port)))
    return out


def cmd_node(a) -> None:
    from .distributed.node import NodeConfig, run_node
    from .distributed.transport import TcpTransport

    C = read_vecs(a.input)
    hosts = _parse_hosts(a.hosts)
    m = len(hosts)
    _, smap = partition(C, m)
    tr = TcpTransport(a.node_id, hosts, connect_timeout=a.timeout)
    try:
        g = run_node(NodeConfig(a.node_id, m, tr, _merge_params(a), smap, a.metric, a.timeout), C)
    finally:
        tr.close()
    write_graph(a.out, g)


def cmd_spill_build(a) -> None:
    from .distributed.spill import external_storage_build

    t0 = time.perf_counter()
    g = external_storage_build(read_vecs(a.input), a.m_sub, a.budget, _merge_params(a), a.metric, a.workdir,
                               resume=not a.fresh, stop_after=a.stop_after)
    if g is None:
        log.info("stopped after %d checkpoints", a.stop_after)
        return
    write_graph(a.out, g)
    _emit([_graph_row(f"spill/m_sub={a.m_sub}", g, a.gt, time.perf_counter() - t0)])


# -- parser -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: env or all cores)")
    p.add_argument("--metric", default="sqeuclidean", choices=["sqeuclidean", "euclidean", "cosine"])
    p.add_argument("-v", "--verbose", action="store_true")


def _merge_opts(p: argparse.ArgumentParser, k: bool = True) -> None:
    if k:
        p.add_argument("--k", type=int, default=20)
    p.add_argument("--lam", type=int, default=10)
    p.add_argument("--delta", type=float, default=0.001)
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--gt", help="ground-truth .ivecs for a recall row")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="knnmerge", description="k-NN graph construction by subgraph merging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded Gaussian-mixture dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--clusters", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--queries", type=int, default=0, help="also write this many held-out queries")
    p.add_argument("--queries-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("partition", help="split a vector file into m subsets")
    p.add_argument("--input", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--strategy", choices=["contiguous", "shuffled"], default="contiguous")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("build-nnd", help="NN-Descent k-NN graph")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _merge_opts(p)
    p.set_defaults(func=cmd_build_nnd)

    for name, helptext in (("merge2", "two-way merge of two subgraphs"),
                           ("mergeN", "multi-way merge of m subgraphs"),
                           ("merge-hier", "bottom-up hierarchy of two-way merges")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--subsets", nargs="+", required=True)
        p.add_argument("--graphs", nargs="+", required=True)
        p.add_argument("--out", required=True)
        _merge_opts(p)
        p.set_defaults(func=lambda a, kind=name: _merge_cmd(a, kind))

    p = sub.add_parser("diversify", help="prune a graph into an index graph")
    p.add_argument("--input", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--max-degree", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diversify)

    p = sub.add_parser("build-index", help="flat incremental index")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--max-degree", type=int, default=32)
    p.add_argument("--ef-construction", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("merge-index", help="merge two index graphs and re-prune")
    p.add_argument("--subsets", nargs=2, required=True)
    p.add_argument("--indexes", nargs=2, required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--max-degree", type=int, default=None)
    p.add_argument("--out", required=True)
    _merge_opts(p, k=False)
    p.set_defaults(func=cmd_merge_index)

    p = sub.add_parser("search-eval", help="recall/QPS sweep over beam widths")
    p.add_argument("--input", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--ef", type=int, nargs="+", default=[32, 64, 128])
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_search_eval)

    p = sub.add_parser("gt", help="exact ground truth by brute force")
    p.add_argument("--input", required=True)
    p.add_argument("--queries")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--dists-out")
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("recall", help="Recall@k of a graph (or .ivecs id lists) against ground truth")
    p.add_argument("--graph", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("cluster-sim", help="multi-node build with in-process nodes")
    p.add_argument("--input", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out", required=True)
    _merge_opts(p)
    p.set_defaults(func=cmd_cluster_sim)

    p = sub.add_parser("node", help="run one node of a multi-node build over TCP")
    p.add_argument("--input", required=True)
    p.add_argument("--node-id", type=int, required=True)
    p.add_argument("--hosts", required=True, help="comma-separated host:port of every node, in id order")
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--out", required=True)
    _merge_opts(p)
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("spill-build", help="single-node build with subsets spilled to disk")
    p.add_argument("--input", required=True)
    p.add_argument("--m-sub", type=int, required=True)
    p.add_argument("--budget", type=int, default=None, help="memory budget in bytes")
    p.add_argument("--workdir", required=True)
    p.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    p.add_argument("--stop-after", type=int, default=None, help="stop after this many checkpoints")
    p.add_argument("--out", required=True)
    _merge_opts(p)
    p.set_defaults(func=cmd_spill_build)

    for p in sub.choices.values():
        _common(p)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None:
        set_threads(args.threads)
    if args.command == "synth" and args.queries and not args.queries_out:
        print("knnmerge: error: --queries requires --queries-out", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (InvalidInputError, FormatError, ConfigError, ProtocolError, TransportError, OSError) as exc:
        print(f"knnmerge {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
