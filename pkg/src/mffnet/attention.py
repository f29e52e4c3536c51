"""Multi-head cross-attention, co-attention blocks and pairs, and self-attention.

Sequences are ``[..., length, dim]``; leading axes are batch axes.
"""

from __future__ import annotations

import numpy as np

from .layers import LayerNorm, Linear, Module, uniform_init
from .tensor import DimensionError, Tensor, matmul, mean_pool, relu, reshape, softmax, swapaxes


class MultiHeadAttention(Module):
    """Per-head query/key/value projections followed by an output projection.

    ``W_Q`` is stored as ``[H, d_q, d_k]`` so head ``h`` uses ``W_Q[h]``.
    """

    def __init__(self, d_q: int, d_kv: int, heads: int, d_k: int, d_out: int,
                 rng: np.random.Generator):
        if heads < 1 or d_k < 1:
            raise ValueError(f"need heads >= 1 and d_k >= 1, got {heads}, {d_k}")
        self.heads = heads
        self.d_k = d_k
        self.W_Q = uniform_init(rng, (heads, d_q, d_k), d_q)
        self.W_K = uniform_init(rng, (heads, d_kv, d_k), d_kv)
        self.W_V = uniform_init(rng, (heads, d_kv, d_k), d_kv)
        self.W_O = uniform_init(rng, (heads * d_k, d_out), heads * d_k)

    def __call__(self, query: Tensor, kv: Tensor, return_weights: bool = False):
        return multi_head_cross_attention(query, kv, self, return_weights)


def _split_heads(seq: Tensor, weight: Tensor) -> Tensor:
    # [..., L, d] -> [..., 1, L, d] @ [H, d, d_k] -> [..., H, L, d_k]
    lifted = reshape(seq, seq.shape[:-2] + (1,) + seq.shape[-2:])
    return matmul(lifted, weight)


def multi_head_cross_attention(query: Tensor, kv: Tensor, params: MultiHeadAttention,
                               return_weights: bool = False):
    if query.ndim < 2 or kv.ndim < 2:
        raise DimensionError(f"attention needs sequences, got {query.shape} and {kv.shape}")
    if query.shape[-1] != params.W_Q.shape[1] or kv.shape[-1] != params.W_K.shape[1]:
        raise DimensionError(
            f"attention dims: query {query.shape}, kv {kv.shape} vs "
            f"W_Q {params.W_Q.shape}, W_K {params.W_K.shape}")
    q = _split_heads(query, params.W_Q)
    k = _split_heads(kv, params.W_K)
    v = _split_heads(kv, params.W_V)
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(params.d_k))
    weights = softmax(scores, axis=-1)                      # [..., H, a, b]
    heads = matmul(weights, v)                              # [..., H, a, d_k]
    merged = swapaxes(heads, -3, -2)                        # [..., a, H, d_k]
    merged = reshape(merged, merged.shape[:-2] + (params.heads * params.d_k,))
    out = matmul(merged, params.W_O)
    return (out, weights) if return_weights else out


class CoAttentionBlock(Module):
    """Cross-attention then feed-forward, each with residual + layer norm."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator,
                 d_ff: int | None = None, eps: float = 1e-5):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} not divisible by heads={heads}")
        d_ff = d_ff or 4 * d_model
        self.mha = MultiHeadAttention(d_model, d_model, heads, d_model // heads, d_model, rng)
        self.norm_attn = LayerNorm(d_model, eps)
        self.ff_in = Linear(d_model, d_ff, rng)
        self.ff_out = Linear(d_ff, d_model, rng)
        self.norm_ff = LayerNorm(d_model, eps)

    def __call__(self, primary: Tensor, context: Tensor) -> tuple[Tensor, Tensor]:
        return co_attention_block(primary, context, self)


def co_attention_block(primary: Tensor, context: Tensor,
                       params: CoAttentionBlock) -> tuple[Tensor, Tensor]:
    """Return the full output sequence and its mean-pooled vector."""
    x = params.norm_attn(primary + params.mha(primary, context))
    seq = params.norm_ff(x + params.ff_out(relu(params.ff_in(x))))
    return seq, mean_pool(seq)


class CoAttentionPair(Module):
    """Two co-attention directions backed by a single shared block."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator,
                 d_ff: int | None = None, eps: float = 1e-5):
        self.block = CoAttentionBlock(d_model, heads, rng, d_ff, eps)

    def __call__(self, seq_a: Tensor, seq_b: Tensor):
        return co_attention_pair(seq_a, seq_b, self)


def co_attention_pair(seq_a: Tensor, seq_b: Tensor, params: CoAttentionPair):
    """``(A attending to B, B attending to A)``, each a ``(seq, pooled)`` tuple."""
    if seq_a.shape[-1] != seq_b.shape[-1]:
        raise DimensionError(
            f"shared co-attention pair needs equal model dims, got {seq_a.shape} and {seq_b.shape}")
    return params.block(seq_a, seq_b), params.block(seq_b, seq_a)


class SelfAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, eps: float = 1e-5):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} not divisible by heads={heads}")
        self.mha = MultiHeadAttention(d_model, d_model, heads, d_model // heads, d_model, rng)
        self.norm = LayerNorm(d_model, eps)

    def __call__(self, seq: Tensor) -> Tensor:
        return self_attention(seq, self)


def self_attention(seq: Tensor, params: SelfAttention) -> Tensor:
    return params.norm(seq + params.mha(seq, seq))
