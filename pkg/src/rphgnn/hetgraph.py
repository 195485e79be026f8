"""Typed heterogeneous graph storage.

Every edge type is stored as a CSR matrix oriented row = destination vertex,
column = source vertex, so ``A @ H_src`` gathers messages into destinations.
Reverse edge types (``"r." + name``) are materialized eagerly at build time.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

REVERSE_PREFIX = "r."


class GraphError(ValueError):
    """Raised for invalid graph construction or malformed graph data."""


@dataclass(frozen=True)
class VertexType:
    name: str
    count: int
    feature_dim: int | None = None


@dataclass(frozen=True)
class EdgeType:
    src: str
    name: str
    dst: str
    reverse: str
    symmetric: bool = False

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.src, self.name, self.dst)

    @property
    def is_reverse(self) -> bool:
        return self.name.startswith(REVERSE_PREFIX) and not self.symmetric


@dataclass(frozen=True)
class CsrAdjacency:
    """All-ones CSR adjacency; ``rows`` destinations by ``cols`` sources."""

    matrix: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr).astype(np.int64)

    def pairs(self) -> np.ndarray:
        """(src, dst) coordinate pairs, shape (nnz, 2)."""
        dst = np.repeat(np.arange(self.rows), np.diff(self.matrix.indptr))
        return np.stack([self.matrix.indices.astype(np.int64), dst], axis=1)

    def normalized(self, dtype=np.float32) -> sp.csr_matrix:
        """D^{-1} A as CSR in ``dtype``; zero-degree rows stay empty."""
        dtype = np.dtype(dtype)
        if dtype not in self._cache:
            deg = self.degrees().astype(np.float64)
            inv = np.zeros_like(deg)
            np.divide(1.0, deg, out=inv, where=deg > 0)
            data = np.repeat(inv, np.diff(self.matrix.indptr)).astype(dtype)
            self._cache[dtype] = sp.csr_matrix(
                (data, self.matrix.indices, self.matrix.indptr), shape=self.matrix.shape
            )
        return self._cache[dtype]


@dataclass(frozen=True)
class FeatureTable:
    vertex_type: str
    matrix: np.ndarray


def csr_from_pairs(pairs: np.ndarray, n_src: int, n_dst: int) -> CsrAdjacency:
    """Build a deduplicated all-ones CSR from (src, dst) pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        if pairs.min() < 0 or pairs[:, 0].max() >= n_src or pairs[:, 1].max() >= n_dst:
            raise GraphError(
                f"edge index out of range for a {n_src} x {n_dst} vertex space"
            )
    # unique over linearized (dst, src) keys also yields sorted CSR order
    keys = np.unique(pairs[:, 1] * max(n_src, 1) + pairs[:, 0])
    dst = keys // max(n_src, 1)
    src = keys % max(n_src, 1)
    indptr = np.zeros(n_dst + 1, dtype=np.int64)
    np.add.at(indptr, dst + 1, 1)
    indptr = np.cumsum(indptr)
    data = np.ones(len(keys), dtype=np.float32)
    mat = sp.csr_matrix((data, src.astype(np.int32), indptr), shape=(n_dst, n_src))
    return CsrAdjacency(mat)


class HeteroGraph:
    """Immutable typed graph; feature tables may be attached once per type."""

    def __init__(
        self,
        vertex_types: Mapping[str, VertexType],
        edge_types: Mapping[str, EdgeType],
        adjacencies: Mapping[str, CsrAdjacency],
    ):
        self._vertex_types = dict(vertex_types)
        self.edge_types: dict[str, EdgeType] = dict(edge_types)
        self.adjacencies: dict[str, CsrAdjacency] = dict(adjacencies)
        self.features: dict[str, np.ndarray] = {}

    @property
    def vertex_types(self) -> dict[str, VertexType]:
        out = {}
        for name, vt in self._vertex_types.items():
            feats = self.features.get(name)
            dim = feats.shape[1] if feats is not None else vt.feature_dim
            out[name] = VertexType(name, vt.count, dim)
        return out

    def vertex_type(self, name: str) -> VertexType:
        try:
            return self.vertex_types[name]
        except KeyError:
            raise GraphError(f"unknown vertex type {name!r}") from None

    def edge_type(self, name: str) -> EdgeType:
        try:
            return self.edge_types[name]
        except KeyError:
            raise GraphError(f"unknown edge type {name!r}") from None

    def reverse_of(self, et: EdgeType | str) -> EdgeType:
        et = self.edge_type(et) if isinstance(et, str) else et
        if et.reverse not in self.edge_types:
            raise GraphError(f"edge type {et.name!r} has no materialized reverse")
        return self.edge_types[et.reverse]

    def count(self, vertex_type: str) -> int:
        return self.vertex_type(vertex_type).count

    def adjacency(self, et: EdgeType | str) -> CsrAdjacency:
        name = et if isinstance(et, str) else et.name
        return self.adjacencies[name]

    def incoming(self, vertex_type: str) -> list[EdgeType]:
        """Edge types ending at ``vertex_type``, sorted by name."""
        return sorted(
            (et for et in self.edge_types.values() if et.dst == vertex_type),
            key=lambda et: et.name,
        )

    def attach_features(self, vertex_type: str, matrix) -> None:
        vt = self.vertex_type(vertex_type)
        if vertex_type in self.features:
            raise GraphError(f"feature table already attached for {vertex_type!r}")
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != vt.count:
            raise GraphError(
                f"feature matrix for {vertex_type!r} has shape {matrix.shape}, "
                f"expected ({vt.count}, d)"
            )
        if matrix.shape[1] < 1:
            raise GraphError("feature dimension must be positive")
        if not np.isfinite(matrix).all():
            raise GraphError(f"non-finite features for {vertex_type!r}")
        self.features[vertex_type] = matrix

    def add_random_embeddings(self, vertex_type: str, dim: int, seed: int) -> None:
        table = random_embeddings(self.vertex_type(vertex_type), dim, seed)
        self.attach_features(vertex_type, table.matrix)

    def fill_missing_features(self, dim: int, seed: int) -> list[str]:
        """Attach random embeddings to every featureless vertex type."""
        filled = []
        for name in sorted(self._vertex_types):
            if name not in self.features:
                self.add_random_embeddings(name, dim, seed)
                filled.append(name)
        return filled

    def schema_signature(self) -> dict:
        return {
            "vertex_types": [
                [vt.name, vt.count, vt.feature_dim]
                for vt in sorted(self.vertex_types.values(), key=lambda v: v.name)
            ],
            "edge_types": [
                [et.src, et.name, et.dst, self.adjacencies[et.name].nnz]
                for et in sorted(self.edge_types.values(), key=lambda e: e.name)
            ],
        }

    def __repr__(self) -> str:
        return (
            f"HeteroGraph(vertex_types={sorted(self._vertex_types)}, "
            f"edge_types={sorted(self.edge_types)})"
        )


EdgeSpec = tuple  # (src, name, dst, pairs)


def build_graph(
    vertex_types: Sequence[tuple[str, int]],
    edge_types: Iterable[EdgeSpec],
    symmetric: Iterable[str] = (),
) -> HeteroGraph:
    """Build a graph, materializing the reverse of every edge type.

    ``edge_types`` holds ``(src, name, dst, pairs)`` with ``pairs`` an iterable
    of ``(src_index, dst_index)``. Names listed in ``symmetric`` must connect a
    type to itself; their edges are treated as undirected and the edge type is
    its own reverse (no ``"r."`` twin is created).
    """
    symmetric = set(symmetric)
    vts: dict[str, VertexType] = {}
    for name, count in vertex_types:
        if name in vts:
            raise GraphError(f"duplicate vertex type {name!r}")
        if count < 0:
            raise GraphError(f"negative vertex count for {name!r}")
        vts[name] = VertexType(name, int(count))

    ets: dict[str, EdgeType] = {}
    adjs: dict[str, CsrAdjacency] = {}
    seen_triples = set()
    for src, name, dst, pairs in edge_types:
        for t in (src, dst):
            if t not in vts:
                raise GraphError(f"edge type {name!r} references unknown vertex type {t!r}")
        if (src, name, dst) in seen_triples:
            raise GraphError(f"duplicate edge type {(src, name, dst)}")
        seen_triples.add((src, name, dst))
        if name.startswith(REVERSE_PREFIX):
            raise GraphError(f"edge type name {name!r} uses the reserved reverse prefix")
        rname = REVERSE_PREFIX + name
        if name in ets or (name not in symmetric and rname in ets):
            raise GraphError(f"duplicate edge type name {name!r}")
        pairs = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs,
                           dtype=np.int64).reshape(-1, 2)
        n_src, n_dst = vts[src].count, vts[dst].count
        if name in symmetric:
            if src != dst:
                raise GraphError(f"symmetric edge type {name!r} must connect a type to itself")
            both = np.concatenate([pairs, pairs[:, ::-1]])
            ets[name] = EdgeType(src, name, dst, reverse=name, symmetric=True)
            adjs[name] = csr_from_pairs(both, n_src, n_dst)
            continue
        if len(pairs) and (pairs.min() < 0 or pairs[:, 0].max() >= n_src
                           or pairs[:, 1].max() >= n_dst):
            raise GraphError(f"edge type {name!r} has an out-of-range vertex index")
        ets[name] = EdgeType(src, name, dst, reverse=rname)
        ets[rname] = EdgeType(dst, rname, src, reverse=name)
        adjs[name] = csr_from_pairs(pairs, n_src, n_dst)
        adjs[rname] = csr_from_pairs(pairs[:, ::-1], n_dst, n_src)
    unknown = symmetric - set(ets)
    if unknown:
        raise GraphError(f"symmetric names not declared as edge types: {sorted(unknown)}")
    return HeteroGraph(vts, ets, adjs)


def degree_normalized_product(adj: CsrAdjacency, H: np.ndarray) -> np.ndarray:
    """Mean-aggregate source rows into destinations: ``(D^{-1} A) H``.

    Destinations with no neighbors get a zero row. The result keeps the
    floating dtype of ``H``.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != adj.cols:
        raise GraphError(
            f"feature matrix has shape {H.shape}, adjacency expects {adj.cols} rows"
        )
    dtype = H.dtype if H.dtype in (np.float32, np.float64) else np.dtype(np.float64)
    out = adj.normalized(dtype) @ H.astype(dtype, copy=False)
    return np.ascontiguousarray(out, dtype=dtype)


def derive_seed(seed: int, *tags) -> np.random.SeedSequence:
    """Stable seed sequence from an integer seed plus string/int tags."""
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode("utf-8")))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return np.random.SeedSequence(words)


def random_embeddings(vt: VertexType, dim: int, seed: int) -> FeatureTable:
    """Gaussian stand-in features for a featureless vertex type."""
    if dim < 1:
        raise GraphError("embedding dimension must be positive")
    rng = np.random.default_rng(derive_seed(seed, "embed", vt.name))
    mat = rng.standard_normal((vt.count, dim)).astype(np.float32)
    return FeatureTable(vt.name, mat)
