"""Scaled dot-product self-attention with an optional multiplicative gate.

A gate ``A`` (values in [0, 1], one entry per query/key pair) enters the
pre-softmax logits as ``log(A + GATE_FLOOR)``, so a hard 0/1 gate is exactly
masked attention and a soft gate stays differentiable.  Rows whose gate
entries are all below ``DISCARD_ALL`` fall back to the ungated logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

GATE_FLOOR = 1e-9
DISCARD_ALL = 1e-6


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0:
            raise ConfigError("d_model and n_heads must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class ProjectionSet:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    def check(self, d_model: int) -> None:
        for name in ("w_q", "w_k", "w_v", "w_o"):
            shape = getattr(self, name).shape
            if shape != (d_model, d_model):
                raise DimensionError(f"{name} has shape {shape}, expected {(d_model, d_model)}")


def _gate_tensor(gate) -> Tensor:
    # Accepts a selector GateMatrix or anything array-like.
    sample = getattr(gate, "sample", gate)
    return ad.as_tensor(sample)


def gate_log_bias(gate: Tensor) -> Tensor:
    """``log(gate + floor)`` with all-discard rows zeroed out."""
    live = ~np.all(gate.data < DISCARD_ALL, axis=-1, keepdims=True)
    return ad.mul(ad.log(ad.add(gate, GATE_FLOOR)), live.astype(np.float64))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, gate=None) -> tuple[Tensor, Tensor]:
    """Return ``(softmax(QK^T/sqrt(d) [+ log gate]) V, weights)``.

    Inputs may carry leading batch/head axes; the gate is broadcast over them.
    """
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise DimensionError(f"attention shape mismatch: Q{q.shape} K{k.shape} V{v.shape}")
    d = q.shape[-1]
    logits = ad.mul(ad.matmul(q, ad.swap_last(k)), 1.0 / np.sqrt(d))
    if gate is not None:
        g = _gate_tensor(gate)
        if g.shape[-2:] != logits.shape[-2:]:
            raise DimensionError(f"gate shape {g.shape} does not match attention {logits.shape[-2:]}")
        if np.any(g.data < 0.0) or np.any(g.data > 1.0):
            raise DimensionError("gate entries must lie in [0, 1]")
        logits = ad.add(logits, gate_log_bias(g))
    weights = ad.softmax_rows(logits)
    return ad.matmul(weights, v), weights


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return ad.transpose(ad.reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, hd = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, h * hd))


def multi_head_forward(h: Tensor, proj: ProjectionSet, cfg: AttentionConfig,
                       gate=None) -> tuple[Tensor, Tensor]:
    """Multi-head self-attention over ``h`` of shape (N, d) or (B, N, d).

    Returns the output-projected result and the attention weights with shape
    (..., n_heads, N, N).  A single gate is shared by every head.
    """
    h = ad.as_tensor(h)
    if h.shape[-1] != cfg.d_model:
        raise DimensionError(f"input width {h.shape[-1]} != d_model {cfg.d_model}")
    proj.check(cfg.d_model)
    unbatched = h.ndim == 2
    if unbatched:
        h = ad.reshape(h, (1,) + h.shape)
    g = None
    if gate is not None:
        g = _gate_tensor(gate)
        if g.ndim == 2:
            g = ad.reshape(g, (1,) + g.shape)
        g = ad.reshape(g, (g.shape[0], 1) + g.shape[1:])
    q = split_heads(ad.matmul(h, proj.w_q), cfg.n_heads)
    k = split_heads(ad.matmul(h, proj.w_k), cfg.n_heads)
    v = split_heads(ad.matmul(h, proj.w_v), cfg.n_heads)
    heads, weights = scaled_dot_attention(q, k, v, g)
    out = ad.matmul(merge_heads(heads), proj.w_o)
    if unbatched:
        out = ad.reshape(out, out.shape[1:])
        weights = ad.reshape(weights, weights.shape[1:])
    return out, weights
