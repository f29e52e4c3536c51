"""Single-modal inconsistency filtering.

Positions of a modality that the cross-modal fusion paid little attention to
get high inconsistency weight; the reweighted features are then cleaned up by
self-attention and pooled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import SelfAttention
from .layers import Module
from .tensor import DimensionError, Tensor, matmul, mean_pool, pointwise_scale, softmax, sum_axis, swapaxes

REDUCTIONS = ("context", "own")


def similarity_matrix(modal: Tensor, strengthened: Tensor) -> Tensor:
    """``modal @ strengthened^T``: ``[..., p, d] x [..., n, d] -> [..., p, n]``."""
    if modal.shape[-1] != strengthened.shape[-1]:
        raise DimensionError(
            f"similarity needs a common feature dim, got {modal.shape} and {strengthened.shape}")
    return matmul(modal, swapaxes(strengthened, -1, -2))


def consistency_scores(sim: Tensor, reduction: str = "context") -> Tensor:
    """Collapse the similarity matrix to one score per position and softmax-normalise.

    ``"context"`` sums each row (over the strengthened sequence) and yields one
    score per own-modality position. ``"own"`` sums each column instead.
    """
    if reduction == "context":
        summed = sum_axis(sim, axis=-1)
    elif reduction == "own":
        summed = sum_axis(sim, axis=-2)
    else:
        raise ValueError(f"unknown reduction {reduction!r}; expected one of {REDUCTIONS}")
    return softmax(summed, axis=-1)


def invert_scores(r_is: Tensor) -> Tensor:
    return 1.0 - r_is


def filter_features(r_incon: Tensor, modal: Tensor, sa: SelfAttention) -> Tensor:
    return mean_pool(sa(pointwise_scale(r_incon, modal)))


@dataclass
class BranchOutput:
    feature: Tensor
    r_is: Tensor
    r_incon: Tensor


class InconsistencyBranch(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator,
                 reduction: str = "context", eps: float = 1e-5):
        if reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {reduction!r}")
        self.sa = SelfAttention(d_model, heads, rng, eps)
        self.reduction = reduction

    def __call__(self, modal: Tensor, strengthened: Tensor) -> BranchOutput:
        return run_branch(modal, strengthened, self)


def run_branch(modal: Tensor, strengthened: Tensor, branch: InconsistencyBranch) -> BranchOutput:
    r_is = consistency_scores(similarity_matrix(modal, strengthened), branch.reduction)
    if r_is.shape[-1] != modal.shape[-2]:
        raise DimensionError(
            f"score length {r_is.shape[-1]} does not match {modal.shape[-2]} positions")
    r_incon = invert_scores(r_is)
    return BranchOutput(filter_features(r_incon, modal, branch.sa), r_is, r_incon)
