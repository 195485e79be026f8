"""Random projection squashing of collected neighbor information."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .hetgraph import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RpConfig:
    strategy: str = "sparse"
    p_sp: float = 2 / 3
    base_seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("sparse", "gaussian"):
            raise ValueError(f"unknown projection strategy {self.strategy!r}")
        if not 0.0 <= self.p_sp < 1.0:
            raise ValueError("p_sp must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RpWeights:
    matrix: np.ndarray
    seed_used: int


def rp_seed(cfg: RpConfig, relation_id: str, k: int) -> np.random.SeedSequence:
    return derive_seed(cfg.base_seed, "rp", relation_id, k)


def make_rp_weights(cfg: RpConfig, relation_id: str, k: int, d_in: int, d_out: int) -> RpWeights:
    """Projection matrix for one relation at iteration ``k``.

    Sparse entries are +1 / 0 / -1 with probabilities (1-p)/2, p, (1-p)/2.
    No 1/sqrt(d) scaling: the row normalization that follows removes scale.
    """
    if d_in < 1 or d_out < 1:
        raise ValueError("projection dimensions must be positive")
    ss = rp_seed(cfg, relation_id, k)
    rng = np.random.default_rng(ss)
    if cfg.strategy == "gaussian":
        mat = rng.standard_normal((d_in, d_out)).astype(np.float32)
    else:
        u = rng.random((d_in, d_out))
        half = (1.0 - cfg.p_sp) / 2.0
        mat = np.zeros((d_in, d_out), dtype=np.float32)
        mat[u < half] = 1.0
        mat[u >= 1.0 - half] = -1.0
    return RpWeights(mat, int(ss.generate_state(1)[0]))


CANCEL_RTOL = 1e-5


def l2_normalize_rows(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    norms = np.sqrt(np.einsum("ij,ij->i", M, M))[:, None]
    return np.divide(M, norms, out=np.zeros_like(M), where=norms > 0)


def squash_contributions(
    collected: Sequence,
    target_dim: int,
    cfg: RpConfig,
    k: int,
    weights: Sequence[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Per-relation ``Norm(H W)`` terms; ``weights`` overrides the seeded matrices."""
    out = []
    for i, info in enumerate(collected):
        H = info.matrix
        if weights is not None:
            W = np.asarray(weights[i], dtype=H.dtype)
        else:
            W = make_rp_weights(cfg, info.relation.render(), k, H.shape[1], target_dim).matrix
            W = W.astype(H.dtype, copy=False)
        Z = H @ W
        # rows that cancel to rounding noise count as zero, not as a random direction
        bound = np.sqrt(np.einsum("ij,ij->i", H, H).max(initial=0) * (W * W).sum(0).max())
        Z[np.sqrt(np.einsum("ij,ij->i", Z, Z)) <= CANCEL_RTOL * bound] = 0
        out.append(l2_normalize_rows(Z))
    return out


def squash(
    collected: Sequence,
    target_dim: int,
    cfg: RpConfig,
    k: int,
    weights: Sequence[np.ndarray] | None = None,
    n_rows: int | None = None,
) -> np.ndarray:
    """Sum-pool the normalized projections of every collected matrix."""
    if not collected:
        if n_rows is None:
            raise ValueError("cannot squash an empty collection without n_rows")
        logger.warning("squash called with no relations; returning a zero state")
        return np.zeros((n_rows, target_dim), dtype=np.float32)
    rows = {info.matrix.shape[0] for info in collected}
    if len(rows) != 1:
        raise ValueError(f"collected matrices disagree on row count: {sorted(rows)}")
    terms = squash_contributions(collected, target_dim, cfg, k, weights)
    total = terms[0].copy()
    for t in terms[1:]:
        total += t
    return total
