"""One peer of the multi-node build, and an in-process cluster of them.

Every node holds the full dataset and the partition. Node ``i`` builds the
subgraph of its subset, then for each scheduled round trades sample graphs
with its partners, runs one pairwise merge, and folds the two resulting
cross graphs (its own half and the half reclaimed from the partner) into its
rows. Neighbor ids on the wire and in the output are positions in ``C``.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from ..core import KnnGraph, Metric, SubsetMap, as_metric, merge_graph_rows
from ..datasets import VectorSet, graph_from_bytes, graph_to_bytes, partition
from ..errors import InvalidInputError
from ..merge import MergeParams, build_sample_graph, cross_merge
from ..nndescent import NNDescentParams, nn_descent_build
from .protocol import Frame, MsgType
from .schedule import n_rounds, pair_seed, schedule, subgraph_seed
from .transport import InProcessHub, Transport

log = logging.getLogger(__name__)


@dataclass
class NodeConfig:
    node_id: int
    m: int
    transport: Transport
    params: MergeParams
    subset_map: SubsetMap
    metric: Metric | str | None = None
    timeout: float | None = 600.0
    subgraph: KnnGraph | None = None  # local ids; built by NN-Descent when absent
    nnd_max_iters: int = 30
    events: list = field(default_factory=list)

    def __post_init__(self):
        if self.m < 2 or not 0 <= self.node_id < self.m:
            raise InvalidInputError(f"node id {self.node_id} invalid for m={self.m}")
        if self.subset_map.m != self.m:
            raise InvalidInputError(f"partition has {self.subset_map.m} subsets, cluster has {self.m} nodes")


def subset_of(C: VectorSet, smap: SubsetMap, s: int) -> VectorSet:
    members = smap.members(s)
    return VectorSet(C.data[members], ids=members.astype(np.int64))


def globalize(g: KnnGraph, gids: np.ndarray) -> KnnGraph:
    """Rewrite local neighbor ids through ``gids``."""
    valid = g.ids >= 0
    ids = np.where(valid, gids[np.where(valid, g.ids, 0)], -1).astype(np.int32)
    return KnnGraph(ids, g.dists.copy(), g.flags.copy())


def _localize(g: KnnGraph, lookup_keys: np.ndarray, lookup_pos: np.ndarray) -> KnnGraph:
    valid = g.ids >= 0
    at = np.searchsorted(lookup_keys, np.where(valid, g.ids, 0))
    at = np.minimum(at, lookup_keys.shape[0] - 1)
    if np.any(valid & (lookup_keys[at] != g.ids)):
        raise InvalidInputError("sample graph references an element outside the merged pair")
    ids = np.where(valid, lookup_pos[at], -1).astype(np.int32)
    return KnnGraph(ids, g.dists, g.flags)


def sample_graph(subgraph: KnnGraph, lam: int, gids: np.ndarray) -> KnnGraph:
    """Sample graph of one subset (from its local-id subgraph), with global ids."""
    return globalize(build_sample_graph(subgraph, lam), gids)


def merge_pair(Ca: VectorSet, Cb: VectorSet, Sa: KnnGraph, Sb: KnnGraph, params: MergeParams,
               metric: Metric | str | None = None) -> tuple[KnnGraph, KnnGraph]:
    """Two-way cross merge of subsets ``a`` and ``b`` from their global-id sample graphs.

    Returns ``(G_ab, G_ba)``: rows of ``Ca`` holding neighbors from ``Cb``,
    and the converse, both with global ids.
    """
    if Sa.n != Ca.n or Sb.n != Cb.n:
        raise InvalidInputError("sample graph row count differs from its subset")
    na = Ca.n
    gids = np.concatenate([Ca.global_ids(), Cb.global_ids()])
    order = np.argsort(gids, kind="stable")
    keys, pos = gids[order], order.astype(np.int32)
    if np.any(keys[1:] == keys[:-1]):
        raise InvalidInputError("subsets overlap")
    data = np.ascontiguousarray(np.vstack([Ca.data, Cb.data]), dtype=np.float32)
    labels = np.concatenate([np.zeros(na, np.int32), np.ones(Cb.n, np.int32)])
    S = _localize(KnnGraph(np.vstack([Sa.ids, Sb.ids]), np.vstack([Sa.dists, Sb.dists]),
                           np.vstack([Sa.flags, Sb.flags])), keys, pos)
    cross = globalize(cross_merge(data, labels, S, params, as_metric(metric), multi=False), gids)
    G_ab = KnnGraph(cross.ids[:na], cross.dists[:na], cross.flags[:na])
    G_ba = KnnGraph(cross.ids[na:], cross.dists[na:], cross.flags[na:])
    return G_ab, G_ba


def run_node(cfg: NodeConfig, C: VectorSet) -> KnnGraph:
    """Run node ``cfg.node_id`` to completion; returns its rows (subset order, global ids)."""
    i, m, p = cfg.node_id, cfg.m, cfg.params
    tr = cfg.transport
    metric = as_metric(cfg.metric)
    mine = subset_of(C, cfg.subset_map, i)
    local = cfg.subgraph
    if local is None:
        nnd = NNDescentParams(p.k, p.lam, cfg.nnd_max_iters, p.delta, subgraph_seed(p.seed, i))
        local = nn_descent_build(mine, nnd, metric)
    if local.n != mine.n:
        raise InvalidInputError(f"node {i}: subgraph has {local.n} rows for {mine.n} elements")
    G = globalize(local, mine.global_ids()).resized(p.k)
    S_raw = graph_to_bytes(sample_graph(local, p.lam, mine.global_ids()))

    def send(peer, rnd, mtype, payload=b""):
        tr.send(peer, Frame(mtype, i, rnd, payload))
        cfg.events.append(("send", rnd, peer, mtype))

    def recv(peer, rnd, mtype):
        f = tr.recv(peer, rnd, mtype, cfg.timeout)
        cfg.events.append(("recv", rnd, peer, mtype))
        return f.payload

    def merge_with(j, S_j_raw, rnd):
        other = subset_of(C, cfg.subset_map, j)
        S_i, S_j = graph_from_bytes(S_raw), graph_from_bytes(S_j_raw)
        pp = p.with_seed(pair_seed(p.seed, i, j, m))
        if i < j:
            G_ij, G_ji = merge_pair(mine, other, S_i, S_j, pp, metric)
        else:
            G_ji, G_ij = merge_pair(other, mine, S_j, S_i, pp, metric)
        cfg.events.append(("fold", rnd, j))
        return G_ij, G_ji

    for rnd in range(1, n_rounds(m) + 1):
        t, j = schedule(i, rnd, m)
        if t != j:
            send(t, rnd, MsgType.SAMPLE_GRAPH, S_raw)
            G_ij, G_ji = merge_with(j, recv(j, rnd, MsgType.SAMPLE_GRAPH), rnd)
            G = merge_graph_rows(G, G_ij, p.k)
            send(j, rnd, MsgType.RESULT_GRAPH, graph_to_bytes(G_ji))
            G_it = graph_from_bytes(recv(t, rnd, MsgType.RESULT_GRAPH))
            G = merge_graph_rows(G, G_it, p.k)
            cfg.events.append(("fold", rnd, t))
        elif i < j:
            G_ij, G_ji = merge_with(j, recv(j, rnd, MsgType.SAMPLE_GRAPH), rnd)
            G = merge_graph_rows(G, G_ij, p.k)
            send(j, rnd, MsgType.RESULT_GRAPH, graph_to_bytes(G_ji))
        else:
            send(j, rnd, MsgType.SAMPLE_GRAPH, S_raw)
            G_it = graph_from_bytes(recv(j, rnd, MsgType.RESULT_GRAPH))
            G = merge_graph_rows(G, G_it, p.k)
            cfg.events.append(("fold", rnd, j))
        log.debug("node %d finished round %d", i, rnd)

    # final barrier so no peer tears down its transport while frames are in flight
    done_round = n_rounds(m) + 1
    for peer in range(m):
        if peer != i:
            send(peer, done_round, MsgType.DONE)
    for peer in range(m):
        if peer != i:
            recv(peer, done_round, MsgType.DONE)
    return G


def assemble(rows: list[KnnGraph], smap: SubsetMap, k: int) -> KnnGraph:
    """Place each node's rows at their global positions."""
    out = KnnGraph.empty(smap.n, k)
    for s, g in enumerate(rows):
        members = smap.members(s)
        out.ids[members, : g.k] = g.ids
        out.dists[members, : g.k] = g.dists
        out.flags[members, : g.k] = g.flags
    return out


def simulate_cluster(C: VectorSet, m: int, params: MergeParams, metric: Metric | str | None = None,
                     subgraphs: list[KnnGraph] | None = None, strategy: str = "contiguous",
                     hub: InProcessHub | None = None, events: list | None = None,
                     timeout: float | None = 600.0) -> KnnGraph:
    """Run ``m`` nodes as threads over in-process queues; returns the graph over all of ``C``.

    ``subgraphs`` (local ids, one per subset) skip the per-node NN-Descent.
    ``events``, if given, receives one list of per-node events per node.
    """
    if m < 2:
        raise InvalidInputError("a cluster needs m >= 2 nodes")
    _, smap = partition(VectorSet(C.data) if C.id_base or C.ids is not None else C, m, strategy)
    if subgraphs is not None and len(subgraphs) != m:
        raise InvalidInputError(f"{len(subgraphs)} subgraphs for {m} nodes")
    hub = hub or InProcessHub(m)
    C0 = VectorSet(C.data)
    cfgs = [NodeConfig(i, m, hub.endpoint(i), params, smap, metric, timeout,
                       None if subgraphs is None else subgraphs[i]) for i in range(m)]
    results: list[KnnGraph | None] = [None] * m
    errors: list[BaseException] = []

    def work(cfg):
        try:
            results[cfg.node_id] = run_node(cfg, C0)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(c,), name=f"node-{c.node_id}") for c in cfgs]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    if events is not None:
        events.extend(c.events for c in cfgs)
    return assemble(results, smap, params.k)
