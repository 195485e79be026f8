"""Planted-signal academic heterograph for desk-scale end-to-end checks.

Schema (4 vertex types)::

    paper  --cite-->       paper     (undirected)
    author --write-->      paper
    paper  --has_field-->  field
    author --affiliated--> institute

Papers carry noisy class-informative features; authors, fields and
institutes are featureless. Each author and field belongs to a class and
papers attach preferentially to same-class authors/fields, so the 2-hop
paper->author->paper aggregate averages many same-class paper features.
``signal`` scales both the feature signal and the homophily; 0 gives a
graph whose labels are independent of everything else.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .hetgraph import HeteroGraph, build_graph, derive_seed


@dataclass
class SynthSpec:
    n_papers: int = 2000
    n_authors: int = 600
    n_fields: int = 40
    n_institutes: int = 30
    num_classes: int = 5
    paper_dim: int = 32
    embed_dim: int = 32
    authors_per_paper: int = 3
    fields_per_paper: int = 2
    cites_per_paper: int = 2
    signal: float = 1.0
    feature_snr: float = 0.35
    homophily: float = 0.6
    seed: int = 0
    train_frac: float = 0.5
    valid_frac: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    graph: HeteroGraph
    labels: np.ndarray
    split: dict
    target: str
    num_classes: int
    base_edges: dict


def _pick(rng, pool_by_class, pool_size, cls, homophily, n):
    """Draw ``n`` distinct ids: same-class w.p. homophily, else uniform."""
    chosen = set()
    while len(chosen) < n:
        if rng.random() < homophily and len(pool_by_class[cls]):
            chosen.add(int(rng.choice(pool_by_class[cls])))
        else:
            chosen.add(int(rng.integers(pool_size)))
    return sorted(chosen)


def make_synthetic(spec: SynthSpec | None = None) -> SynthDataset:
    spec = spec or SynthSpec()
    rng = np.random.default_rng(derive_seed(spec.seed, "synth"))
    C = spec.num_classes
    labels = np.arange(spec.n_papers) % C
    rng.shuffle(labels)
    author_cls = np.arange(spec.n_authors) % C
    field_cls = np.arange(spec.n_fields) % C
    inst_cls = np.arange(spec.n_institutes) % C
    authors_by = [np.flatnonzero(author_cls == c) for c in range(C)]
    fields_by = [np.flatnonzero(field_cls == c) for c in range(C)]
    insts_by = [np.flatnonzero(inst_cls == c) for c in range(C)]
    papers_by = [np.flatnonzero(labels == c) for c in range(C)]
    h = spec.homophily * spec.signal

    write, has_field, cite = [], [], []
    for p in range(spec.n_papers):
        c = labels[p]
        for a in _pick(rng, authors_by, spec.n_authors, c, h, spec.authors_per_paper):
            write.append((a, p))
        for f in _pick(rng, fields_by, spec.n_fields, c, h, spec.fields_per_paper):
            has_field.append((p, f))
        for q in _pick(rng, papers_by, spec.n_papers, c, h, spec.cites_per_paper):
            if q != p:
                cite.append((p, q))
    affiliated = [(a, i) for a in range(spec.n_authors)
                  for i in _pick(rng, insts_by, spec.n_institutes,
                                 author_cls[a], h, 1)]

    means = rng.standard_normal((C, spec.paper_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    scale = spec.signal * spec.feature_snr * np.sqrt(spec.paper_dim)
    feats = rng.standard_normal((spec.n_papers, spec.paper_dim)) + scale * means[labels]

    base_edges = {
        "cite": np.asarray(cite), "write": np.asarray(write),
        "has_field": np.asarray(has_field), "affiliated": np.asarray(affiliated),
    }
    g = build_graph(
        [("paper", spec.n_papers), ("author", spec.n_authors),
         ("field", spec.n_fields), ("institute", spec.n_institutes)],
        [("paper", "cite", "paper", base_edges["cite"]),
         ("author", "write", "paper", base_edges["write"]),
         ("paper", "has_field", "field", base_edges["has_field"]),
         ("author", "affiliated", "institute", base_edges["affiliated"])],
        symmetric=["cite"],
    )
    g.attach_features("paper", feats.astype(np.float32))
    g.fill_missing_features(spec.embed_dim, spec.seed)

    perm = rng.permutation(spec.n_papers)
    n_tr = int(spec.train_frac * spec.n_papers)
    n_va = int(spec.valid_frac * spec.n_papers)
    split = {"train": np.sort(perm[:n_tr]), "valid": np.sort(perm[n_tr:n_tr + n_va]),
             "test": np.sort(perm[n_tr + n_va:])}
    return SynthDataset(g, labels.astype(np.int64), split, "paper", C, base_edges)


def figure_schema_graph() -> HeteroGraph:
    """Smallest graph carrying the four-type academic schema used in the ledger tables."""
    return build_graph(
        [("paper", 3), ("field", 1), ("author", 2), ("institute", 1)],
        [("paper", "cite", "paper", [(0, 1)]),
         ("author", "write", "paper", [(0, 0), (0, 1), (1, 0), (1, 2)]),
         ("paper", "has_field", "field", [(0, 0), (1, 0)]),
         ("author", "affiliated", "institute", [(0, 0), (1, 0)])],
        symmetric=["cite"],
    )


def dense_schema_graph(n_types: int = 8, names_per_pair: int = 3, count: int = 6,
                       edges_per_type: int = 10, seed: int = 0) -> HeteroGraph:
    """Many-edge-type schema where the number of 2-hop relations explodes."""
    rng = np.random.default_rng(derive_seed(seed, "dense"))
    types = [f"t{i}" for i in range(n_types)]
    specs = []
    for i in range(n_types):
        for j in range(i, n_types):
            for m in range(names_per_pair):
                pairs = rng.integers(count, size=(edges_per_type, 2))
                specs.append((types[i], f"e{i}_{j}_{m}", types[j], pairs))
    g = build_graph([(t, count) for t in types], specs)
    g.fill_missing_features(8, seed)
    return g
