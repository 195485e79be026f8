"""Learnable encoder: per-group Conv1D over iterations + MLP, then a fusion MLP.

Parameters live in a flat ``dict[str, ndarray]`` whose insertion order is the
checkpoint order. Forward passes return a cache consumed by the matching
backward pass, so dropout masks are drawn exactly once per call.

Every hidden layer uses the tanh-approximated GELU defined below.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def activation(z):
    return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + _GELU_A * z**3)))


def activation_grad(z):
    t = np.tanh(_GELU_C * (z + _GELU_A * z**3))
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * z * z)


@dataclass
class EncoderConfig:
    hidden_dim: int = 64
    conv_out_channels: int = 2
    group_mlp_layers: int = 2
    fusion_mlp_layers: int = 2
    dropout_input: float = 0.0
    dropout_hidden: float = 0.5
    num_classes: int = 2

    def __post_init__(self):
        for name in ("dropout_input", "dropout_hidden"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {p}")
        for name in ("hidden_dim", "conv_out_channels", "group_mlp_layers",
                     "fusion_mlp_layers", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def group_shapes(groups: Sequence[np.ndarray]) -> list[tuple[int, int]]:
    """(K, d_g) for each stacked (K, N, d_g) group array."""
    return [(g.shape[0], g.shape[2]) for g in groups]


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(cfg: EncoderConfig, shapes: Sequence[tuple[int, int]], seed: int = 0,
                dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, C = cfg.hidden_dim, cfg.conv_out_channels
    params: dict[str, np.ndarray] = {}
    for gi, (K, dg) in enumerate(shapes):
        params[f"g{gi}.conv_w"] = _uniform(rng, K, (K, C), dtype)
        params[f"g{gi}.conv_b"] = _uniform(rng, K, (C,), dtype)
        fan = C * dg
        for li in range(cfg.group_mlp_layers):
            params[f"g{gi}.mlp{li}.w"] = _uniform(rng, fan, (fan, d), dtype)
            params[f"g{gi}.mlp{li}.b"] = _uniform(rng, fan, (d,), dtype)
            fan = d
    fan = len(shapes) * d
    for li in range(cfg.fusion_mlp_layers):
        out = cfg.num_classes if li == cfg.fusion_mlp_layers - 1 else d
        params[f"fuse{li}.w"] = _uniform(rng, fan, (fan, out), dtype)
        params[f"fuse{li}.b"] = _uniform(rng, fan, (out,), dtype)
        fan = out
    return params


def n_groups(params) -> int:
    return sum(1 for k in params if k.endswith(".conv_w"))


def _dropout_mask(shape, p, training, rng, dtype):
    if not training or p <= 0.0:
        return None
    keep = rng.random(shape, dtype=np.float32) >= np.float32(p)
    return keep.astype(dtype) / dtype.type(1.0 - p)


def conv1d_over_iterations(slabs: np.ndarray, conv_w: np.ndarray, conv_b: np.ndarray) -> np.ndarray:
    """Mix K iteration slabs into C output channels.

    ``slabs`` is (K, B, d_g); returns (C, B, d_g) with
    ``out[c] = sum_k conv_w[k, c] * slabs[k] + conv_b[c]``.
    """
    slabs = np.asarray(slabs)
    if slabs.ndim != 3 or conv_w.shape[0] != slabs.shape[0] or conv_b.shape != (conv_w.shape[1],):
        raise ValueError(
            f"conv shapes disagree: slabs {slabs.shape}, w {conv_w.shape}, b {conv_b.shape}"
        )
    out = np.tensordot(conv_w, slabs, axes=([0], [0]))
    return out + conv_b[:, None, None]


def _mlp_forward(x, params, prefix, n_layers, p_drop, training, rng, act_last=False):
    caches = []
    for li in range(n_layers):
        W, b = params[f"{prefix}{li}.w"], params[f"{prefix}{li}.b"]
        z = x @ W + b
        if li == n_layers - 1 and not act_last:
            caches.append((x, None, None))
            x = z
            continue
        mask = _dropout_mask(z.shape, p_drop, training, rng, z.dtype)
        h = activation(z)
        caches.append((x, z, mask))
        x = h if mask is None else h * mask
    return x, caches


def _mlp_backward(dout, params, prefix, caches, grads):
    for li in reversed(range(len(caches))):
        x, z, mask = caches[li]
        if z is not None:
            if mask is not None:
                dout = dout * mask
            dout = dout * activation_grad(z)
        grads[f"{prefix}{li}.w"] = x.T @ dout
        grads[f"{prefix}{li}.b"] = dout.sum(axis=0)
        dout = dout @ params[f"{prefix}{li}.w"].T
    return dout


def group_encode(slabs, params, gi: int, cfg: EncoderConfig, training=False, rng=None,
                 return_cache=False):
    """Encode one group's (K, B, d_g) slabs into a (B, hidden_dim) representation."""
    slabs = np.asarray(slabs)
    if training and rng is None:
        raise ValueError("training mode needs an rng for dropout")
    W, b = params[f"g{gi}.conv_w"], params[f"g{gi}.conv_b"]
    mask = _dropout_mask(slabs.shape, cfg.dropout_input, training, rng, slabs.dtype)
    x = slabs if mask is None else slabs * mask
    M = conv1d_over_iterations(x, W, b)
    C, B, dg = M.shape
    flat = M.transpose(1, 0, 2).reshape(B, C * dg)
    expected = params[f"g{gi}.mlp0.w"].shape[0]
    if flat.shape[1] != expected:
        raise ValueError(f"group {gi}: concatenated width {flat.shape[1]} != {expected}")
    out, mlp_cache = _mlp_forward(flat, params, f"g{gi}.mlp", cfg.group_mlp_layers,
                                  cfg.dropout_hidden, training, rng)
    if return_cache:
        return out, (x, M.shape, mlp_cache)
    return out


def fuse_and_classify(reprs, params, cfg: EncoderConfig, training=False, rng=None,
                      return_cache=False):
    if len(reprs) != n_groups(params):
        raise ValueError(f"got {len(reprs)} group representations, params hold {n_groups(params)}")
    cat = np.concatenate(reprs, axis=1)
    logits, cache = _mlp_forward(cat, params, "fuse", cfg.fusion_mlp_layers,
                                 cfg.dropout_hidden, training, rng)
    if return_cache:
        return logits, cache
    return logits


def forward(params, groups, cfg: EncoderConfig, training=False, rng=None, return_cache=False):
    """Logits for a batch; ``groups`` is a list of (K, B, d_g) arrays."""
    reprs, gcaches = [], []
    for gi, slabs in enumerate(groups):
        r, c = group_encode(slabs, params, gi, cfg, training, rng, return_cache=True)
        reprs.append(r)
        gcaches.append(c)
    logits, fcache = fuse_and_classify(reprs, params, cfg, training, rng, return_cache=True)
    if return_cache:
        return logits, (gcaches, fcache, [r.shape[1] for r in reprs])
    return logits


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. logits."""
    B = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    loss = -logp[np.arange(B), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    return float(loss), dlogits / logits.dtype.type(B)


def loss_and_grads(groups, labels, params, cfg: EncoderConfig, rng=None, training=True):
    """Mean softmax cross-entropy and exact gradients for every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= cfg.num_classes):
        raise ValueError(f"labels must lie in [0, {cfg.num_classes})")
    if training and rng is None:
        rng = np.random.default_rng(0)
    logits, (gcaches, fcache, widths) = forward(params, groups, cfg, training, rng,
                                                return_cache=True)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    grads: dict[str, np.ndarray] = {}
    dcat = _mlp_backward(dlogits, params, "fuse", fcache, grads)
    splits = np.cumsum(widths)[:-1]
    for gi, (dr, (x, mshape, mlp_cache)) in enumerate(zip(np.split(dcat, splits, axis=1), gcaches)):
        dflat = _mlp_backward(dr, params, f"g{gi}.mlp", mlp_cache, grads)
        C, B, dg = mshape
        dM = dflat.reshape(B, C, dg).transpose(1, 0, 2)
        grads[f"g{gi}.conv_w"] = np.tensordot(x, dM, axes=([1, 2], [1, 2]))
        grads[f"g{gi}.conv_b"] = dM.sum(axis=(1, 2))
    return loss, {k: grads[k] for k in params}


def predict_logits(params, groups, cfg: EncoderConfig, indices=None, batch_size=10000):
    """Eval-mode logits over ``indices`` of full (K, N, d_g) group arrays."""
    n = groups[0].shape[1]
    idx = np.arange(n) if indices is None else np.asarray(indices)
    out = []
    for s in range(0, len(idx), batch_size):
        b = idx[s:s + batch_size]
        out.append(forward(params, [g[:, b] for g in groups], cfg, training=False))
    if not out:
        return np.zeros((0, cfg.num_classes), dtype=np.float32)
    return np.concatenate(out)


CKPT_MAGIC = b"RPCK"


def save_checkpoint(path, params, cfg: EncoderConfig, group_names: Sequence[str], meta=None):
    """JSON header (config, groups, parameter layout) then f32 blocks in order."""
    header = dict(meta or {})
    header.update({
        "config": cfg.to_dict(),
        "groups": list(group_names),
        "params": [[k, list(v.shape)] for k, v in params.items()],
    })
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for v in params.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return Path(path)


def load_checkpoint(path):
    """Returns (params, EncoderConfig, header)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + hlen])
    pos = 8 + hlen
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(raw):
        raise ValueError(f"{path}: trailing or missing parameter bytes")
    return params, EncoderConfig(**header["config"]), header
