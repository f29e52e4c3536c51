"""Multiple feature fusion: co-attention pairs, enhancement, and tensor fusion.

Raw text/image semantic features are projected to a common model width, fused
by a first shared co-attention pair into ``r_it``, enhanced against each
modality by two more pairs and finally combined by an outer product with
appended ones (TFN) into the consistency feature ``R_M``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import CoAttentionPair
from .layers import Linear, Module
from .tensor import DimensionError, Tensor, concat, matmul, ones_like_last, reshape


@dataclass
class FusionOutput:
    R_M: Tensor | None
    r_ct_seq: Tensor
    r_ci_seq: Tensor
    r_it: Tensor | None
    text_proj: Tensor
    image_proj: Tensor
    tfn_matrix: Tensor | None = None


def tfn_matrix(x: Tensor, y: Tensor) -> Tensor:
    """``[x; 1] (outer) [y; 1]`` over the last axis, shape ``[..., d+1, d+1]``."""
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"tfn_fuse needs equal dims, got {x.shape} and {y.shape}")
    xa = concat([x, ones_like_last(x)], axis=-1)
    ya = concat([y, ones_like_last(y)], axis=-1)
    col = reshape(xa, xa.shape + (1,))
    row = reshape(ya, ya.shape[:-1] + (1, ya.shape[-1]))
    return matmul(col, row)


def tfn_fuse(x: Tensor, y: Tensor, projection: Linear) -> tuple[Tensor, Tensor]:
    """Flatten the TFN matrix row-major and project it; returns ``(fused, raw matrix)``."""
    m = tfn_matrix(x, y)
    flat = reshape(m, m.shape[:-2] + (m.shape[-2] * m.shape[-1],))
    return projection(flat), m


def _as_token(vec: Tensor) -> Tensor:
    return reshape(vec, vec.shape[:-1] + (1, vec.shape[-1]))


def enhance(r_it: Tensor, modal_seq: Tensor, pair: CoAttentionPair) -> Tensor:
    """``concat(CA(modal, r_it), CA(r_it, modal))`` with each side mean-pooled."""
    (_, modal_side), (_, fused_side) = pair(modal_seq, _as_token(r_it))
    return concat([modal_side, fused_side], axis=-1)


class FusionModule(Module):
    def __init__(self, d_t: int, d_i: int, d_model: int, heads: int, d_out: int,
                 rng: np.random.Generator, enhance: bool = True, consistency: bool = True,
                 eps: float = 1e-5):
        self.proj_text = Linear(d_t, d_model, rng)
        self.proj_image = Linear(d_i, d_model, rng)
        self.pair1 = CoAttentionPair(d_model, heads, rng, eps=eps)
        # without the consistency path only the first pair survives: the filter
        # branches still need its strengthened sequences
        self.fuse_rit = Linear(2 * d_model, d_model, rng) if consistency else None
        use_pairs = consistency and enhance
        self.pair2 = CoAttentionPair(d_model, heads, rng, eps=eps) if use_pairs else None
        self.pair3 = CoAttentionPair(d_model, heads, rng, eps=eps) if use_pairs else None
        d_e = 2 * d_model if enhance else d_model
        self.tfn = Linear((d_e + 1) ** 2, d_out, rng) if consistency else None
        self.d_model = d_model

    def project(self, R_T: Tensor, R_I: Tensor) -> tuple[Tensor, Tensor]:
        return self.proj_text(R_T), self.proj_image(R_I)

    def first_fusion(self, text: Tensor, image: Tensor):
        (r_ct_seq, r_ct), (r_ci_seq, r_ci) = self.pair1(text, image)
        r_it = self.fuse_rit(concat([r_ct, r_ci], axis=-1)) if self.fuse_rit is not None else None
        return r_it, r_ct_seq, r_ci_seq

    def __call__(self, R_T: Tensor, R_I: Tensor) -> FusionOutput:
        text, image = self.project(R_T, R_I)
        r_it, r_ct_seq, r_ci_seq = self.first_fusion(text, image)
        out = FusionOutput(None, r_ct_seq, r_ci_seq, r_it, text, image)
        if self.tfn is None:
            return out
        if self.pair2 is not None:
            r_it_t = enhance(r_it, text, self.pair2)
            r_it_i = enhance(r_it, image, self.pair3)
        else:
            r_it_t = r_it_i = r_it
        out.R_M, out.tfn_matrix = tfn_fuse(r_it_t, r_it_i, self.tfn)
        return out
