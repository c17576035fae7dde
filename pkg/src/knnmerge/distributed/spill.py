"""Single-machine build that runs the pairwise schedule with at most two subsets in memory.

Subset vectors, subgraphs and sample graphs live in ``workdir``. After every
subgraph build and every pair merge, the updated graphs are written as new
versioned files and a plain-text manifest is atomically replaced, so an
interrupted build resumes from the last completed step.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..core import KnnGraph, Metric, SubsetMap, as_metric, merge_graph_rows
from ..datasets import VectorSet, read_graph, read_vecs, write_graph, write_vecs
from ..errors import ConfigError, InvalidInputError
from ..merge import MergeParams
from ..nndescent import NNDescentParams, nn_descent_build
from .node import assemble, globalize, merge_pair, sample_graph
from .schedule import pair_seed, pair_tasks, subgraph_seed

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
_RECORD = 9  # bytes per serialized neighbor


@dataclass
class Residency:
    """Counts what is held in memory; ``peak`` keeps the maximum of each kind."""

    limit: int = 2
    current: dict = field(default_factory=lambda: {"subset": set(), "graph": set(), "sample": set()})
    peak: dict = field(default_factory=lambda: {"subset": 0, "graph": 0, "sample": 0})

    def load(self, kind: str, s: int) -> None:
        held = self.current[kind]
        held.add(s)
        if len(held) > self.limit:
            raise RuntimeError(f"{len(held)} {kind}s resident, limit {self.limit}")
        self.peak[kind] = max(self.peak[kind], len(held))

    def drop_all(self) -> None:
        for held in self.current.values():
            held.clear()


def _sizes(n: int, m: int) -> np.ndarray:
    return np.array([len(b) for b in np.array_split(np.arange(n), m)], dtype=np.int64)


def pair_footprint(n: int, d: int, m_sub: int, k: int, lam: int) -> int:
    """Bytes for two of the largest subsets with their graphs, sample graphs and merge state."""
    big = int(_sizes(n, m_sub).max())
    per_row = 4 * d + k * _RECORD + 2 * lam * _RECORD
    # the pair's cross graph plus its sampling caches
    work = k * _RECORD + 8 * lam * 4
    return 2 * big * (per_row + work)


def min_feasible_m(n: int, d: int, k: int, lam: int, budget: int) -> int | None:
    # each subset must still hold more than k elements for its own subgraph
    for m in range(2, n // (k + 1) + 1):
        if pair_footprint(n, d, m, k, lam) <= budget:
            return m
    return None


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Manifest:
    """Plain-text checkpoint state.

    Lines::

        config n=<n> m_sub=<m> k=<k> lam=<lam> seed=<seed>
        subset <i> <path> <sha256>
        sample <i> <path> <sha256>
        graph <i> <path> <sha256>       (latest version of subset i's rows)
        step <count>                    (completed checkpoints)
        pair <round> <a> <b>            (completed merges, in order)
    """

    def __init__(self, workdir: str, config: str):
        self.workdir = workdir
        self.config = config
        self.files: dict[tuple[str, int], tuple[str, str]] = {}
        self.pairs: list[tuple[int, int, int]] = []
        self.steps = 0

    @property
    def path(self) -> str:
        return os.path.join(self.workdir, MANIFEST)

    def record(self, kind: str, i: int, name: str) -> None:
        self.files[(kind, i)] = (name, _sha256(os.path.join(self.workdir, name)))

    def get(self, kind: str, i: int) -> str | None:
        entry = self.files.get((kind, i))
        return None if entry is None else os.path.join(self.workdir, entry[0])

    def save(self) -> None:
        lines = [f"config {self.config}", f"step {self.steps}"]
        for (kind, i), (name, digest) in sorted(self.files.items()):
            lines.append(f"{kind} {i} {name} {digest}")
        lines += [f"pair {r} {a} {b}" for r, a, b in self.pairs]
        tmp = self.path + ".tmp"
        with open(tmp, "w") as f:
            f.write("\n".join(lines) + "\n")
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.path)

    @classmethod
    def load(cls, workdir: str, config: str) -> _Manifest | None:
        man = cls(workdir, config)
        if not os.path.exists(man.path):
            return None
        with open(man.path) as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != f"config {config}":
            raise ConfigError(f"{man.path} was written for a different configuration")
        for line in lines[1:]:
            parts = line.split()
            if parts[0] == "step":
                man.steps = int(parts[1])
            elif parts[0] == "pair":
                man.pairs.append((int(parts[1]), int(parts[2]), int(parts[3])))
            else:
                kind, i, name, digest = parts[0], int(parts[1]), parts[2], parts[3]
                if _sha256(os.path.join(workdir, name)) != digest:
                    raise ConfigError(f"checksum mismatch for {name}; checkpoint is corrupt")
                man.files[(kind, i)] = (name, digest)
        return man


def _version(path: str) -> int:
    return int(os.path.basename(path).rsplit("_v", 1)[1].split(".")[0])


def external_storage_build(C: VectorSet, m_sub: int, memory_budget: int | None, params: MergeParams,
                           metric: Metric | str | None = None, workdir: str | os.PathLike = ".",
                           resume: bool = True, stop_after: int | None = None,
                           residency: Residency | None = None, nnd_max_iters: int = 30) -> KnnGraph | None:
    """Build the graph over ``C`` by the multi-node pairing schedule on one machine.

    Produces the same graph as ``simulate_cluster(C, m_sub, params)`` with
    contiguous subsets. ``stop_after`` ends the run (returning ``None``) once
    that many checkpoints exist in total, which simulates an interruption.
    """
    metric = as_metric(metric)
    workdir = os.fspath(workdir)
    os.makedirs(workdir, exist_ok=True)
    n, d = C.n, C.d
    k, lam = params.k, params.lam
    if not 2 <= m_sub <= n:
        raise InvalidInputError(f"m_sub={m_sub} must satisfy 2 <= m_sub <= n={n}")
    if memory_budget is not None and pair_footprint(n, d, m_sub, k, lam) > memory_budget:
        best = min_feasible_m(n, d, k, lam, memory_budget)
        hint = f"minimum feasible m_sub is {best}" if best else "no subset count fits"
        raise ConfigError(f"memory budget {memory_budget} B too small for m_sub={m_sub}; {hint}")
    res = residency if residency is not None else Residency()

    config = f"n={n} d={d} m_sub={m_sub} k={k} lam={lam} seed={params.seed} delta={params.delta}"
    man = _Manifest.load(workdir, config) if resume else None
    if man is None:
        man = _Manifest(workdir, config)
    smap = SubsetMap.contiguous(_sizes(n, m_sub))
    starts = np.concatenate([[0], np.cumsum(_sizes(n, m_sub))])

    def stop() -> bool:
        return stop_after is not None and man.steps >= stop_after

    def load_subset(i: int) -> VectorSet:
        res.load("subset", i)
        v = read_vecs(man.get("subset", i), "fvecs")
        return VectorSet(v.data, int(starts[i]))

    # vectors are staged once; they are inputs, not checkpoints
    for i in range(m_sub):
        if man.get("subset", i) is None:
            name = f"subset_{i}.fvecs"
            write_vecs(os.path.join(workdir, name), C.data[starts[i] : starts[i + 1]], "fvecs")
            man.record("subset", i, name)
    man.save()

    for i in range(m_sub):
        if man.get("graph", i) is not None:
            continue
        if stop():
            return None
        Ci = load_subset(i)
        nnd = NNDescentParams(k, lam, nnd_max_iters, params.delta, subgraph_seed(params.seed, i))
        local = nn_descent_build(Ci, nnd, metric)
        res.load("graph", i)
        res.load("sample", i)
        write_graph(os.path.join(workdir, f"sample_{i}.knng"), sample_graph(local, lam, Ci.global_ids()))
        write_graph(os.path.join(workdir, f"graph_{i}_v0.knng"), globalize(local, Ci.global_ids()).resized(k))
        man.record("sample", i, f"sample_{i}.knng")
        man.record("graph", i, f"graph_{i}_v0.knng")
        man.steps += 1
        man.save()
        res.drop_all()
        log.info("subgraph %d built", i)

    done = set(man.pairs)
    for task in pair_tasks(m_sub):
        a, b = task.pair
        key = (task.round, a, b)
        if key in done:
            continue
        if stop():
            return None
        Ca, Cb = load_subset(a), load_subset(b)
        for s in (a, b):
            res.load("sample", s)
            res.load("graph", s)
        Sa, Sb = read_graph(man.get("sample", a)), read_graph(man.get("sample", b))
        pp = params.with_seed(pair_seed(params.seed, a, b, m_sub))
        G_ab, G_ba = merge_pair(Ca, Cb, Sa, Sb, pp, metric)
        stale = []
        for s, cross in ((a, G_ab), (b, G_ba)):
            old = man.get("graph", s)
            folded = merge_graph_rows(read_graph(old), cross, k)
            name = f"graph_{s}_v{_version(old) + 1}.knng"
            write_graph(os.path.join(workdir, name), folded)
            man.record("graph", s, name)
            stale.append(old)
        man.pairs.append(key)
        man.steps += 1
        man.save()
        res.drop_all()
        for old in stale:  # superseded once the manifest no longer names them
            os.remove(old)
        log.info("round %d pair (%d, %d) merged", task.round, a, b)

    # the output itself is the only thing assembled in full
    return assemble([read_graph(man.get("graph", i)) for i in range(m_sub)], smap, k)
