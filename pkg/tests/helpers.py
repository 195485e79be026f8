"""Random graph builders and independent float64 oracles shared by the tests."""

from __future__ import annotations

import itertools

import numpy as np

from rphgnn.hetgraph import build_graph, derive_seed
from rphgnn.squashing import make_rp_weights


def random_graph(seed, max_types=4, max_count=50, max_edge_types=5, with_features=True):
    """Random heterograph; sparse enough that some vertices have zero degree."""
    rng = np.random.default_rng(seed)
    n_types = int(rng.integers(1, max_types + 1))
    types = [(f"v{i}", int(rng.integers(1, max_count + 1))) for i in range(n_types)]
    counts = dict(types)
    specs = []
    n_edges = int(rng.integers(1, max_edge_types + 1))
    for e in range(n_edges):
        s = types[int(rng.integers(n_types))][0]
        d = types[int(rng.integers(n_types))][0]
        m = int(rng.integers(0, 2 * max(counts[s], counts[d]) + 1))
        pairs = np.stack([rng.integers(counts[s], size=m), rng.integers(counts[d], size=m)], 1)
        specs.append((s, f"e{e}", d, pairs))
    g = build_graph(types, specs)
    if with_features:
        for name, count in types:
            dim = int(rng.integers(1, 7))
            g.attach_features(name, rng.standard_normal((count, dim)).astype(np.float32))
    return g


def edge_lists(g, et):
    """dst -> list of src neighbors, read from the raw coordinate pairs."""
    nbrs = {}
    for s, d in g.adjacency(et).pairs():
        nbrs.setdefault(int(d), []).append(int(s))
    return nbrs


def path_sum_aggregate(g, relation, H):
    """Sum over every concrete meta-path instance of its normalized weight.

    A path u0 -e1-> u1 ... -eL-> uL contributes H[u0] * prod_l 1/deg_{e_l}(u_l).
    Paths are enumerated explicitly, so this is independent of any matrix chain.
    """
    ets = relation.edge_types
    lists = [edge_lists(g, et) for et in ets]
    n_dst = g.count(relation.dst)
    out = np.zeros((n_dst, H.shape[1]))
    for v in range(n_dst):
        # walk backward: states are (vertex, weight)
        frontier = [(v, 1.0)]
        for l in reversed(range(len(ets))):
            nxt = []
            for u, w in frontier:
                nb = lists[l].get(u, [])
                for s in nb:
                    nxt.append((s, w / len(nb)))
            frontier = nxt
        for u, w in frontier:
            out[v] += w * H[u]
    return out


def dense_norm(g, et):
    adj = g.adjacency(et)
    A = np.zeros((adj.rows, adj.cols))
    for s, d in adj.pairs():
        A[d, s] = 1.0
    deg = A.sum(1, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)


def dense_precompute(g, rels_by_type, target, K, rp_cfg):
    """Float64 dense re-implementation of the propagate-then-update loop.

    Shares only the seeded projection matrices with the code under test.
    Returns {relation id: [slab_1, ..., slab_K]} for the target type.
    """
    P = {et.name: dense_norm(g, et) for et in g.edge_types.values()}
    states = {vt: g.features[vt].astype(np.float64) for vt in rels_by_type}
    slabs = {r.render(): [] for r in rels_by_type[target]}
    for k in range(1, K + 1):
        new = {}
        for vt, rels in rels_by_type.items():
            dim = g.features[vt].shape[1]
            acc = np.zeros((g.count(vt), dim))
            for r in rels:
                H = states[r.src]
                for et in r.edge_types:
                    H = P[et.name] @ H
                if vt == target:
                    slabs[r.render()].append(H)
                W = make_rp_weights(rp_cfg, r.render(), k, H.shape[1], dim).matrix.astype(np.float64)
                Z = H @ W
                wmax = max(np.sqrt(sum(x * x for x in col)) for col in W.T)
                hmax = max((np.sqrt(sum(x * x for x in row)) for row in H), default=0.0)
                for i in range(Z.shape[0]):
                    n = np.sqrt(sum(x * x for x in Z[i]))
                    if n > 1e-5 * wmax * hmax:
                        acc[i] += Z[i] / n
            new[vt] = acc
        states = new
    return slabs


def naive_metrics(y_true, y_pred):
    labels = sorted(set(y_true) | set(y_pred))
    f1s = []
    for c in labels:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    acc = sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true)
    return sum(f1s) / len(f1s), acc


def central_difference_check(loss_fn, params, grads, h=1e-4):
    """Largest relative error between ``grads`` and central differences."""
    worst = 0.0
    for name, v in params.items():
        for idx in itertools.product(*map(range, v.shape)):
            orig = v[idx]
            v[idx] = orig + h
            lp = loss_fn()
            v[idx] = orig - h
            lm = loss_fn()
            v[idx] = orig
            fd = (lp - lm) / (2 * h)
            a = grads[name][idx]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst


def seeded(seed, *tags):
    return np.random.default_rng(derive_seed(seed, *tags))
