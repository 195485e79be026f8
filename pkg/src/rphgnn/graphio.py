"""On-disk graph directory format.

Layout::

    graph.json            manifest: vertex types, edge types, optional target
    <edge>.edges          little-endian u32 (src, dst) pairs
    <vertex>.feat         u32 rows, u32 cols, then row-major little-endian f32
    labels.bin            u32 class id per target vertex, 0xFFFFFFFF = unlabeled
    split.json            {"train": [...], "valid": [...], "test": [...]}
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .hetgraph import GraphError, HeteroGraph, build_graph

UNLABELED = 0xFFFFFFFF
MANIFEST = "graph.json"


class GraphFormatError(GraphError):
    pass


def write_features(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", *matrix.shape))
        f.write(matrix.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise GraphFormatError(f"{path}: truncated feature header")
    rows, cols = struct.unpack_from("<II", raw)
    expected = 8 + rows * cols * 4
    if len(raw) != expected:
        raise GraphFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(rows, cols).astype(np.float32)


def write_edges(path, pairs) -> None:
    np.ascontiguousarray(np.asarray(pairs).reshape(-1, 2), dtype="<u4").tofile(path)


def read_edges(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise GraphFormatError(f"{path}: edge file length {len(raw)} is not a multiple of 8")
    return np.frombuffer(raw, dtype="<u4").reshape(-1, 2).astype(np.int64)


def write_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.where(labels < 0, UNLABELED, labels).astype("<u4")
    out.tofile(path)


def read_labels(path) -> np.ndarray:
    """Class ids as int64; unlabeled vertices become -1."""
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise GraphFormatError(f"{path}: label file length is not a multiple of 4")
    labels = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    labels[labels == UNLABELED] = -1
    return labels


def write_split(path, split: dict) -> None:
    payload = {k: [int(i) for i in split[k]] for k in ("train", "valid", "test")}
    Path(path).write_text(json.dumps(payload))


def read_split(path) -> dict[str, np.ndarray]:
    try:
        payload = json.loads(Path(path).read_text())
        return {k: np.asarray(payload[k], dtype=np.int64) for k in ("train", "valid", "test")}
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise GraphFormatError(f"{path}: malformed split file ({exc})") from exc


def save_graph_dir(
    root,
    graph: HeteroGraph,
    *,
    base_edges: dict | None = None,
    target: str | None = None,
    labels=None,
    split: dict | None = None,
    extra: dict | None = None,
) -> Path:
    """Write ``graph`` to ``root``.

    Only forward edge types are stored; reverses are rebuilt on load. Pass
    ``base_edges`` (name -> pairs) to write the exact original pair lists.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    vts = []
    for name, vt in sorted(graph.vertex_types.items()):
        entry = {"name": name, "count": vt.count, "feature_dim": vt.feature_dim}
        if name in graph.features:
            fname = f"{name}.feat"
            write_features(root / fname, graph.features[name])
            entry["features"] = fname
        else:
            entry["features"] = None
        vts.append(entry)
    ets = []
    for name, et in sorted(graph.edge_types.items()):
        if et.is_reverse:
            continue
        if base_edges is not None and name in base_edges:
            pairs = np.asarray(base_edges[name]).reshape(-1, 2)
        else:
            pairs = graph.adjacency(et).pairs()
        fname = f"{name}.edges"
        write_edges(root / fname, pairs)
        ets.append({"src": et.src, "name": name, "dst": et.dst, "file": fname,
                    "symmetric": et.symmetric})
    manifest = {"vertex_types": vts, "edge_types": ets, "target": target}
    if extra:
        manifest.update(extra)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if labels is not None:
        write_labels(root / "labels.bin", labels)
    if split is not None:
        write_split(root / "split.json", split)
    return root


def load_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise GraphFormatError(f"{path} not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON ({exc})") from exc


def load_graph_dir(root) -> HeteroGraph:
    root = Path(root)
    manifest = load_manifest(root)
    try:
        vt_entries = manifest["vertex_types"]
        et_entries = manifest["edge_types"]
        vertex_types = [(v["name"], int(v["count"])) for v in vt_entries]
        edge_specs = []
        symmetric = []
        for e in et_entries:
            pairs = read_edges(root / e["file"])
            edge_specs.append((e["src"], e["name"], e["dst"], pairs))
            if e.get("symmetric"):
                symmetric.append(e["name"])
    except (KeyError, TypeError) as exc:
        raise GraphFormatError(f"{root / MANIFEST}: missing field {exc}") from exc
    except FileNotFoundError as exc:
        raise GraphFormatError(str(exc)) from exc
    try:
        graph = build_graph(vertex_types, edge_specs, symmetric=symmetric)
    except GraphError as exc:
        raise GraphFormatError(str(exc)) from exc
    for v in vt_entries:
        fname = v.get("features")
        if not fname:
            continue
        feats = read_features(root / fname)
        declared = v.get("feature_dim")
        if declared is not None and feats.shape[1] != int(declared):
            raise GraphFormatError(
                f"{fname}: {feats.shape[1]} columns, manifest declares {declared}"
            )
        try:
            graph.attach_features(v["name"], feats)
        except GraphError as exc:
            raise GraphFormatError(str(exc)) from exc
    return graph
