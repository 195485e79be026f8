"""Relation-wise neighbor collection: one mean-aggregated matrix per relation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .hetgraph import EdgeType, GraphError, HeteroGraph, degree_normalized_product
from .relations import Relation, even_relation, scheme_relations


@dataclass
class CollectedNeighborInfo:
    relation: Relation
    matrix: np.ndarray


def _edge(g: HeteroGraph, edge_type) -> EdgeType:
    return g.edge_type(edge_type) if isinstance(edge_type, str) else edge_type


def collect_odd(g: HeteroGraph, edge_type, state_src: np.ndarray) -> CollectedNeighborInfo:
    et = _edge(g, edge_type)
    out = degree_normalized_product(g.adjacency(et), state_src)
    return CollectedNeighborInfo(Relation((et,), "odd"), out)


def collect_even(g: HeteroGraph, edge_type, state_dst_prev: np.ndarray) -> CollectedNeighborInfo:
    """dst -> src -> dst along the reverse then the forward edge type.

    Two chained sparse-dense products; the 2-hop adjacency is never formed.
    """
    et = _edge(g, edge_type)
    rel = even_relation(g, et)
    back = degree_normalized_product(g.adjacency(rel.edge_types[0]), state_dst_prev)
    out = degree_normalized_product(g.adjacency(et), back)
    return CollectedNeighborInfo(rel, out)


def collect_relation(g: HeteroGraph, r: Relation, states: Mapping[str, np.ndarray]) -> CollectedNeighborInfo:
    if r.src not in states:
        raise GraphError(f"no state for vertex type {r.src!r}")
    H = states[r.src]
    for et in r.edge_types:
        H = degree_normalized_product(g.adjacency(et), H)
    return CollectedNeighborInfo(r, H)


def rwnc_collect(
    g: HeteroGraph,
    states_by_type: Mapping[str, np.ndarray],
    scheme: str,
    vt: str,
    threads: int = 1,
    relations: list[Relation] | None = None,
) -> list[CollectedNeighborInfo]:
    """Collect neighbor information for every relation of ``scheme`` ending at ``vt``.

    Outputs come back in canonical relation order whatever ``threads`` is.
    """
    rels = relations if relations is not None else scheme_relations(g, vt, scheme)
    if threads > 1 and len(rels) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda r: collect_relation(g, r, states_by_type), rels))
    return [collect_relation(g, r, states_by_type) for r in rels]
