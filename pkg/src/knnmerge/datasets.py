"""Vector files, synthetic data, partitioning and graph serialization."""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .core import KnnGraph, SubsetMap
from .errors import FormatError, InvalidInputError

_VEC_DTYPES = {
    "fvecs": np.dtype("<f4"),
    "bvecs": np.dtype("u1"),
    "ivecs": np.dtype("<i4"),
}


@dataclass
class VectorSet:
    """Dense ``n x d`` float32 matrix; row ``r`` has global id ``id_base + r``
    unless an explicit ``ids`` array is attached (non-contiguous subsets)."""

    data: np.ndarray
    id_base: int = 0
    ids: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 1 and data.size == 0:
            data = data.reshape(0, 0)
        if data.ndim != 2:
            raise InvalidInputError("vector data must be 2-D")
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        if self.ids is not None:
            self.ids = np.asarray(self.ids, dtype=np.int64)
            if self.ids.shape != (self.n,):
                raise InvalidInputError("ids must have one entry per row")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def global_ids(self) -> np.ndarray:
        if self.ids is not None:
            return self.ids
        return np.arange(self.id_base, self.id_base + self.n, dtype=np.int64)

    def slice(self, lo: int, hi: int) -> VectorSet:
        if self.ids is not None:
            return VectorSet(self.data[lo:hi], ids=self.ids[lo:hi])
        return VectorSet(self.data[lo:hi], self.id_base + lo)

    def __len__(self) -> int:
        return self.n


def read_vecs(path: str | os.PathLike, fmt: str | None = None) -> VectorSet:
    """Read a TEXMEX ``.fvecs`` / ``.bvecs`` / ``.ivecs`` file."""
    fmt = fmt or _format_from_suffix(path)
    if fmt not in _VEC_DTYPES:
        raise InvalidInputError(f"unknown vector format {fmt!r}")
    with open(path, "rb") as f:
        return decode_vecs(f.read(), fmt)


def decode_vecs(buf: bytes, fmt: str) -> VectorSet:
    dt = _VEC_DTYPES[fmt]
    if len(buf) == 0:
        return VectorSet(np.zeros((0, 0), dtype=np.float32))
    if len(buf) < 4:
        raise FormatError("truncated dimension header", 0)
    d = struct.unpack_from("<i", buf, 0)[0]
    if d <= 0:
        raise FormatError(f"invalid dimension {d}", 0)
    rec = 4 + d * dt.itemsize
    full = len(buf) // rec
    rec_dtype = np.dtype([("dim", "<i4"), ("vec", dt, (d,))])
    recs = np.frombuffer(buf, dtype=rec_dtype, count=full)
    bad = np.flatnonzero(recs["dim"] != d)
    if bad.size:
        r = int(bad[0])
        raise FormatError(f"record {r} has dimension {int(recs['dim'][r])}, expected {d}", r * rec)
    if full * rec != len(buf):
        raise FormatError(f"truncated record {full}", full * rec)
    return VectorSet(recs["vec"].astype(np.float32))


def write_vecs(path: str | os.PathLike, data, fmt: str | None = None) -> None:
    fmt = fmt or _format_from_suffix(path)
    dt = _VEC_DTYPES[fmt]
    if isinstance(data, VectorSet):
        data = data.data
    data = np.asarray(data)
    n, d = data.shape if data.size else (0, 0)
    rec_dtype = np.dtype([("dim", "<i4"), ("vec", dt, (d,))])
    recs = np.empty(n, dtype=rec_dtype)
    recs["dim"] = d
    if n:
        recs["vec"] = data.astype(dt)
    with open(path, "wb") as f:
        f.write(recs.tobytes())


def _format_from_suffix(path) -> str:
    suffix = os.path.splitext(os.fspath(path))[1].lstrip(".")
    if suffix not in _VEC_DTYPES:
        raise InvalidInputError(f"cannot infer vector format from {path!r}; pass fmt")
    return suffix


def partition(C: VectorSet, m: int, strategy: str = "contiguous", seed: int = 0) -> tuple[list[VectorSet], SubsetMap]:
    """Split ``C`` into ``m`` subsets whose sizes differ by at most one.

    ``contiguous`` keeps id blocks; ``shuffled`` assigns a seeded random
    permutation, each subset keeping its members in ascending global id.
    """
    n = C.n
    if not 2 <= m <= n:
        raise InvalidInputError(f"subset count m={m} must satisfy 2 <= m <= n={n}")
    if strategy == "contiguous":
        order = np.arange(n)
    elif strategy == "shuffled":
        order = np.random.default_rng(seed).permutation(n)
    else:
        raise InvalidInputError(f"unknown partition strategy {strategy!r}")
    assignment = np.empty(n, dtype=np.int32)
    blocks = [np.sort(b) for b in np.array_split(order, m)]
    for s, b in enumerate(blocks):
        assignment[b] = s
    gids = C.global_ids()
    if strategy == "contiguous":
        subsets = []
        lo = 0
        for b in blocks:
            subsets.append(C.slice(lo, lo + b.size))
            lo += b.size
    else:
        subsets = [VectorSet(C.data[b], ids=gids[b]) for b in blocks]
    return subsets, SubsetMap(assignment, m)


def _mixture_params(d: int, clusters: int, rng: np.random.Generator):
    centers = rng.normal(0.0, 3.0, size=(clusters, d))
    rank = max(1, d // 2)
    # per-cluster low-rank spread plus isotropic noise
    bases = rng.normal(0.0, 1.0, size=(clusters, rank, d)) / np.sqrt(rank)
    scales = np.linspace(2.0, 0.5, rank)
    return centers, bases, scales, rank


def _mixture_sample(n: int, d: int, params, rng: np.random.Generator) -> np.ndarray:
    centers, bases, scales, rank = params
    labels = rng.integers(0, centers.shape[0], size=n)
    latent = rng.normal(size=(n, rank)) * scales
    noise = rng.normal(0.0, 0.1, size=(n, d))
    x = centers[labels] + np.einsum("nr,nrd->nd", latent, bases[labels]) + noise
    return x.astype(np.float32)


def synth_dataset(n: int, d: int, clusters: int, seed: int) -> VectorSet:
    """Seeded Gaussian-mixture sample; each component has a low-rank covariance plus noise."""
    if n < 1 or d < 1 or clusters < 1:
        raise InvalidInputError("n, d and clusters must be >= 1")
    rng = np.random.default_rng(seed)
    params = _mixture_params(d, clusters, rng)
    return VectorSet(_mixture_sample(n, d, params, rng))


def synth_queries(nq: int, d: int, clusters: int, seed: int, query_seed: int = 1_000_003) -> VectorSet:
    """Fresh points from the same mixture ``synth_dataset(.., seed)`` samples."""
    params = _mixture_params(d, clusters, np.random.default_rng(seed))
    return VectorSet(_mixture_sample(nq, d, params, np.random.default_rng([seed, query_seed])))


# GraphFile: "KNNG" u32 version, u64 n, u32 k, then per row u32 count and
# count packed (u32 id, f32 dist, u8 flag) records, all little-endian.
GRAPH_MAGIC = b"KNNG"
GRAPH_VERSION = 1
_GRAPH_HEADER = struct.Struct("<4sIQI")
_ROW_COUNT = struct.Struct("<I")
_RECORD = np.dtype([("id", "<u4"), ("dist", "<f4"), ("flag", "u1")])


def graph_to_bytes(g: KnnGraph) -> bytes:
    counts = g.counts()
    recs = np.empty(int(counts.sum()), dtype=_RECORD)
    mask = g.ids >= 0
    recs["id"] = g.ids[mask]
    recs["dist"] = g.dists[mask]
    recs["flag"] = g.flags[mask]
    raw = recs.tobytes()
    out = io.BytesIO()
    out.write(_GRAPH_HEADER.pack(GRAPH_MAGIC, GRAPH_VERSION, g.n, g.k))
    pos = 0
    for c in counts.tolist():
        out.write(_ROW_COUNT.pack(c))
        out.write(raw[pos : pos + c * _RECORD.itemsize])
        pos += c * _RECORD.itemsize
    return out.getvalue()


def graph_from_bytes(buf: bytes) -> KnnGraph:
    if len(buf) < _GRAPH_HEADER.size:
        raise FormatError("truncated graph header", 0)
    magic, version, n, k = _GRAPH_HEADER.unpack_from(buf, 0)
    if magic != GRAPH_MAGIC:
        raise FormatError(f"bad graph magic {magic!r}", 0)
    if version != GRAPH_VERSION:
        raise FormatError(f"unsupported graph version {version}", 4)
    g = KnnGraph.empty(n, k)
    pos = _GRAPH_HEADER.size
    for i in range(n):
        if pos + 4 > len(buf):
            raise FormatError(f"truncated row {i} header", pos)
        (c,) = _ROW_COUNT.unpack_from(buf, pos)
        if c > k:
            raise FormatError(f"row {i} holds {c} records, capacity is {k}", pos)
        pos += 4
        end = pos + c * _RECORD.itemsize
        if end > len(buf):
            raise FormatError(f"truncated row {i}", pos)
        recs = np.frombuffer(buf, dtype=_RECORD, count=c, offset=pos)
        g.ids[i, :c] = recs["id"]
        g.dists[i, :c] = recs["dist"]
        g.flags[i, :c] = recs["flag"] != 0
        pos = end
    if pos != len(buf):
        raise FormatError("trailing bytes after last row", pos)
    return g


def write_graph(path: str | os.PathLike | BinaryIO, g: KnnGraph) -> None:
    data = graph_to_bytes(g)
    if hasattr(path, "write"):
        path.write(data)
        return
    with open(path, "wb") as f:
        f.write(data)


def read_graph(path: str | os.PathLike) -> KnnGraph:
    with open(path, "rb") as f:
        return graph_from_bytes(f.read())
