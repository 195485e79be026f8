"""Relation (meta-path schema) algebra and the pre-merge provenance ledger."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .hetgraph import EdgeType, GraphError, HeteroGraph

SCHEMES = ("local", "two_hop", "even_odd")
ARROW = "→"


@dataclass(frozen=True)
class Relation:
    edge_types: tuple[EdgeType, ...]
    parity: str = "general"

    def __post_init__(self):
        ets = tuple(self.edge_types)
        object.__setattr__(self, "edge_types", ets)
        if not ets:
            raise ValueError("a relation needs at least one edge type")
        for a, b in zip(ets, ets[1:]):
            if a.dst != b.src:
                raise ValueError(
                    f"edge types {a.name!r} -> {b.name!r} do not chain ({a.dst} != {b.src})"
                )
        if self.parity == "odd" and len(ets) != 1:
            raise ValueError("odd relations have exactly one edge type")
        if self.parity == "even":
            if len(ets) != 2 or ets[0].reverse != ets[1].name or ets[1].reverse != ets[0].name:
                raise ValueError("even relations are a reverse edge type followed by its forward")
        if self.parity not in ("odd", "even", "general"):
            raise ValueError(f"unknown parity {self.parity!r}")

    @property
    def src(self) -> str:
        return self.edge_types[0].src

    @property
    def dst(self) -> str:
        return self.edge_types[-1].dst

    def __len__(self) -> int:
        return len(self.edge_types)

    def render(self) -> str:
        """Canonical id, e.g. ``"author --write--> paper"``."""
        parts = [self.src]
        for et in self.edge_types:
            parts.append(f"--{et.name}--> {et.dst}")
        return " ".join(parts)

    def compact(self, abbrev: Mapping[str, str] | None = None) -> str:
        """Vertex-type path such as ``"p→a→p"``."""
        return compact_path([self.src] + [et.dst for et in self.edge_types], abbrev)

    def __str__(self) -> str:
        return self.render()


def compact_path(types: Sequence[str], abbrev: Mapping[str, str] | None = None) -> str:
    abbrev = abbrev or {}
    return ARROW.join(abbrev.get(t, t) for t in types)


def first_letter_abbrev(g: HeteroGraph) -> dict[str, str]:
    """Single-letter vertex-type abbreviations when they are unambiguous."""
    names = sorted(g.vertex_types)
    letters = {n: n[0] for n in names}
    if len(set(letters.values())) != len(names):
        return {n: n for n in names}
    return letters


def _sorted(rels):
    return sorted(rels, key=Relation.render)


def local_relations(g: HeteroGraph, target: str) -> list[Relation]:
    g.vertex_type(target)
    return _sorted(Relation((et,), "odd") for et in g.incoming(target))


def even_relation(g: HeteroGraph, et: EdgeType) -> Relation:
    return Relation((g.reverse_of(et), et), "even")


def even_odd_relations(g: HeteroGraph, target: str) -> list[Relation]:
    rels = []
    for et in g.incoming(target):
        rels.append(Relation((et,), "odd"))
        rels.append(even_relation(g, et))
    return _sorted(rels)


def enumerate_relations(g: HeteroGraph, target: str, max_hops: int) -> list[Relation]:
    """Every type-compatible edge-type sequence of length <= max_hops ending at target."""
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")
    g.vertex_type(target)
    out: list[Relation] = []
    frontier: list[tuple[EdgeType, ...]] = [(et,) for et in g.incoming(target)]
    for _ in range(max_hops):
        out.extend(Relation(p) for p in frontier)
        frontier = [(et,) + p for p in frontier for et in g.incoming(p[0].src)]
    return _sorted(out)


def count_relations(g: HeteroGraph, target: str, max_hops: int) -> int:
    """Size of enumerate_relations without materializing the list."""
    counts = {vt: 1 if vt == target else 0 for vt in g.vertex_types}
    total = 0
    for _ in range(max_hops):
        nxt = dict.fromkeys(counts, 0)
        for et in g.edge_types.values():
            nxt[et.src] += counts[et.dst]
        total += sum(nxt.values())
        counts = nxt
    return total


def scheme_relations(g: HeteroGraph, target: str, scheme: str) -> list[Relation]:
    if scheme == "local":
        return local_relations(g, target)
    if scheme == "even_odd":
        return even_odd_relations(g, target)
    if scheme == "two_hop":
        return enumerate_relations(g, target, 2)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def dense_normalized(g: HeteroGraph, et: EdgeType) -> np.ndarray:
    """Row-normalized dense adjacency built from the coordinate list (float64)."""
    adj = g.adjacency(et)
    dense = np.zeros((adj.rows, adj.cols), dtype=np.float64)
    for s, d in adj.pairs():
        dense[d, s] = 1.0
    deg = dense.sum(axis=1, keepdims=True)
    return np.divide(dense, deg, out=np.zeros_like(dense), where=deg > 0)


def oracle_aggregate(g: HeteroGraph, r: Relation, features_by_type: Mapping[str, np.ndarray]) -> np.ndarray:
    """Dense float64 chained mean aggregation along ``r``; the test oracle."""
    H = np.asarray(features_by_type[r.src], dtype=np.float64)
    for et in r.edge_types:
        P = dense_normalized(g, et)
        if H.shape[0] != P.shape[1]:
            raise GraphError(f"state has {H.shape[0]} rows, {et.name} expects {P.shape[1]}")
        H = P @ H
    return H


@dataclass
class LedgerCell:
    relations: list[tuple[str, ...]]  # vertex-type paths
    updates: int

    def label(self) -> str:
        return "(0,raw)" if self.updates == 0 else f"({self.updates})"


@dataclass
class ProvenanceLedger:
    scheme: str
    K: int
    groups: list[Relation]
    cells: dict[tuple[str, int], LedgerCell]
    abbrev: dict[str, str]

    def group_names(self) -> list[str]:
        return [r.compact(self.abbrev) for r in self.groups]

    def cell(self, group: str, k: int) -> LedgerCell:
        """Look up a cell by compact or canonical group name."""
        for r in self.groups:
            if group in (r.compact(self.abbrev), r.render()):
                return self.cells[(r.render(), k)]
        raise KeyError(group)

    def cell_strings(self, group: str, k: int) -> list[str]:
        return [compact_path(p, self.abbrev) for p in self.cell(group, k).relations]

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "K": self.K,
            "groups": self.group_names(),
            "rows": [
                {
                    "iteration": k,
                    "cells": {
                        r.compact(self.abbrev): {
                            "relations": self.cell_strings(r.render(), k),
                            "updates": self.cells[(r.render(), k)].updates,
                            "label": self.cells[(r.render(), k)].label(),
                        }
                        for r in self.groups
                    },
                }
                for k in range(1, self.K + 1)
            ],
        }

    def to_markdown(self) -> str:
        names = self.group_names()
        lines = [
            "| Iteration | " + " | ".join(names) + " |",
            "|---|" + "---|" * len(names),
        ]
        for k in range(1, self.K + 1):
            row = []
            for r in self.groups:
                cell = self.cells[(r.render(), k)]
                rels = sorted(compact_path(p, self.abbrev) for p in cell.relations)
                row.append("<br>".join(rels + [cell.label()]))
            lines.append(f"| {k} | " + " | ".join(row) + " |")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_markdown(text: str) -> dict:
        """Recover {(group, k): (sorted relations, label)} from to_markdown output."""
        rows = [ln for ln in text.strip().splitlines() if ln.startswith("|")]
        header = [c.strip() for c in rows[0].strip("|").split("|")][1:]
        out = {}
        for ln in rows[2:]:
            cols = [c.strip() for c in ln.strip("|").split("|")]
            k = int(cols[0])
            for name, cell in zip(header, cols[1:]):
                parts = cell.split("<br>")
                out[(name, k)] = (parts[:-1], parts[-1])
        return out

    def dumps_json(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False)


def provenance_ledger(
    g: HeteroGraph,
    target: str,
    scheme: str,
    K: int,
    abbrev: Mapping[str, str] | None = None,
) -> ProvenanceLedger:
    """Symbolically replay K propagate-then-update iterations.

    Each cell lists the relations whose information is pre-merged into the
    vector a group collects at iteration k, plus the number of untrainable
    state updates the information passed through (k - 1).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if K < 1:
        raise ValueError("K must be >= 1")
    rels_by_type = {vt: scheme_relations(g, vt, scheme) for vt in g.vertex_types}
    # merged[vt] holds vertex-type paths pre-merged into vt's current state
    merged: dict[str, list[tuple[str, ...]]] = {vt: [(vt,)] for vt in g.vertex_types}
    cells: dict[tuple[str, int], LedgerCell] = {}
    for k in range(1, K + 1):
        nxt: dict[str, list[tuple[str, ...]]] = {}
        for vt, rels in rels_by_type.items():
            collected = []
            for r in rels:
                suffix = tuple(et.dst for et in r.edge_types)
                paths = [p + suffix for p in merged[r.src]]
                if vt == target:
                    cells[(r.render(), k)] = LedgerCell(paths, k - 1)
                collected.extend(paths)
            nxt[vt] = collected
        merged = nxt
    if abbrev is None:
        abbrev = first_letter_abbrev(g)
    return ProvenanceLedger(scheme, K, rels_by_type[target], cells, dict(abbrev))
