"""Hybrid propagate-then-update pre-computation and the group archive format."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hetgraph import GraphError, HeteroGraph
from .propagation import rwnc_collect
from .relations import SCHEMES, count_relations, scheme_relations
from .squashing import RpConfig, squash

logger = logging.getLogger(__name__)

MAGIC = b"RPHG"
VERSION = 1


class ArchiveError(ValueError):
    pass


class RelationCapError(RuntimeError):
    """Raised when a scheme would collect more relations than allowed."""


@dataclass
class PrecomputeConfig:
    K: int = 2
    scheme: str = "even_odd"
    rp: RpConfig = field(default_factory=RpConfig)
    target_type: str = "paper"
    relation_cap: int = 512
    threads: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "scheme": self.scheme,
            "rp": self.rp.to_dict(),
            "target_type": self.target_type,
            "relation_cap": self.relation_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrecomputeConfig":
        d = dict(d)
        rp = RpConfig(**d.pop("rp", {}))
        d.pop("threads", None)
        return cls(rp=rp, **d)


@dataclass
class GroupTensor:
    relation: str
    parity: str
    slabs: list[np.ndarray]

    @property
    def K(self) -> int:
        return len(self.slabs)

    def stacked(self) -> np.ndarray:
        """(K, N, d) float32 view used by the encoder."""
        return np.stack(self.slabs).astype(np.float32, copy=False)


def check_relation_cap(g: HeteroGraph, cfg: PrecomputeConfig) -> None:
    if cfg.scheme != "two_hop":
        return
    for vt in sorted(g.vertex_types):
        n = count_relations(g, vt, 2)
        if n > cfg.relation_cap:
            raise RelationCapError(
                f"two_hop scheme needs {n} relations for vertex type {vt!r}, "
                f"cap is {cfg.relation_cap}"
            )


def run_precompute(g: HeteroGraph, cfg: PrecomputeConfig) -> list[GroupTensor]:
    """Run K propagate-then-update iterations and archive target collections.

    States start as raw features. At iteration k each vertex type collects
    along its scheme relations from the (k-1) states; the target's collections
    are archived before squashing, then every type squashes into its new state.
    """
    target = cfg.target_type
    g.vertex_type(target)
    missing = [vt for vt in sorted(g.vertex_types) if vt not in g.features]
    if missing:
        raise GraphError(f"missing feature tables for {missing}")
    check_relation_cap(g, cfg)

    rels = {vt: scheme_relations(g, vt, cfg.scheme) for vt in sorted(g.vertex_types)}
    dims = {vt: g.features[vt].shape[1] for vt in rels}
    states = {vt: g.features[vt] for vt in rels}
    groups = [GroupTensor(r.render(), r.parity, []) for r in rels[target]]

    for k in range(1, cfg.K + 1):
        new_states = {}
        last = k == cfg.K
        for vt, vt_rels in rels.items():
            if last and vt != target:
                continue
            collected = rwnc_collect(g, states, cfg.scheme, vt, cfg.threads, vt_rels)
            if vt == target:
                for grp, info in zip(groups, collected):
                    grp.slabs.append(np.ascontiguousarray(info.matrix, dtype=np.float32))
            if not last:
                new_states[vt] = squash(collected, dims[vt], cfg.rp, k, n_rows=g.count(vt))
        if not last:
            states = new_states
        logger.debug("precompute iteration %d/%d done", k, cfg.K)
    return groups


def schema_hash(g: HeteroGraph) -> str:
    blob = json.dumps(g.schema_signature(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_groups(groups: list[GroupTensor], path, meta: dict | None = None) -> Path:
    """Write ``MAGIC | u32 version | u32 header_len | JSON header | f32 blocks``."""
    if not groups:
        raise ArchiveError("no groups to save")
    K = groups[0].K
    rows = groups[0].slabs[0].shape[0]
    for grp in groups:
        if grp.K != K:
            raise ArchiveError("all groups must share K")
        if any(s.shape != (rows, grp.slabs[0].shape[1]) for s in grp.slabs):
            raise ArchiveError(f"slab shape mismatch in group {grp.relation!r}")
    header = dict(meta or {})
    header.update({
        "K": K,
        "rows": rows,
        "groups": [{"relation": grp.relation, "parity": grp.parity,
                    "cols": grp.slabs[0].shape[1]} for grp in groups],
    })
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for grp in groups:
            for slab in grp.slabs:
                f.write(np.ascontiguousarray(slab, dtype="<f4").tobytes())
    return path


def read_archive_header(path) -> tuple[dict, int]:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise ArchiveError(f"{path}: not a group archive")
        version, hlen = struct.unpack("<II", head[4:])
        if version != VERSION:
            raise ArchiveError(f"{path}: unsupported archive version {version}")
        try:
            header = json.loads(f.read(hlen))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ArchiveError(f"{path}: corrupt header ({exc})") from exc
    return header, 12 + hlen


def load_groups(path, expected_K: int | None = None, expected_hash: str | None = None):
    """Read an archive; returns (groups, header)."""
    header, offset = read_archive_header(path)
    try:
        K, rows, entries = header["K"], header["rows"], header["groups"]
    except KeyError as exc:
        raise ArchiveError(f"{path}: header missing {exc}") from exc
    if expected_K is not None and K != expected_K:
        raise ArchiveError(f"{path}: archive has K={K}, manifest expects K={expected_K}")
    if expected_hash is not None and header.get("manifest_hash") != expected_hash:
        raise ArchiveError(
            f"{path}: archive manifest hash {header.get('manifest_hash')} != {expected_hash}"
        )
    raw = Path(path).read_bytes()
    need = offset + sum(K * rows * e["cols"] * 4 for e in entries)
    if len(raw) != need:
        raise ArchiveError(f"{path}: expected {need} bytes, found {len(raw)}")
    groups = []
    pos = offset
    for e in entries:
        slabs = []
        for _ in range(K):
            n = rows * e["cols"]
            slabs.append(np.frombuffer(raw, dtype="<f4", count=n, offset=pos)
                         .reshape(rows, e["cols"]).astype(np.float32))
            pos += n * 4
        groups.append(GroupTensor(e["relation"], e["parity"], slabs))
    return groups, header
