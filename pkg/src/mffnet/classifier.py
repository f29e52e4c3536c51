"""Similarity-adaptive feature weighting, the classifier head and BCE loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .layers import Linear, Module
from .tensor import Tensor, as_tensor, clip, concat, log, mul, relu, sigmoid, sqrt, sum_axis

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7


class DegenerateInputError(ValueError):
    """A global feature vector has zero norm, so cosine similarity is undefined."""


def cosine_sim(C_T: Tensor, C_I: Tensor, strict: bool = True) -> Tensor:
    """Cosine similarity along the last axis.

    Zero-norm rows raise in strict mode; otherwise they score 0 with a warning.
    """
    C_T, C_I = as_tensor(C_T), as_tensor(C_I)
    nt = np.linalg.norm(C_T.data, axis=-1)
    ni = np.linalg.norm(C_I.data, axis=-1)
    degenerate = (nt == 0) | (ni == 0)
    if np.any(degenerate):
        if strict:
            raise DegenerateInputError("cosine similarity of a zero-norm global feature")
        logger.warning("zero-norm global feature in %d sample(s); using f_s = 0",
                       int(np.sum(degenerate)))
    dot = sum_axis(C_T * C_I, axis=-1)
    denom = sqrt(sum_axis(C_T * C_T, axis=-1)) * sqrt(sum_axis(C_I * C_I, axis=-1))
    if np.any(degenerate):
        keep = Tensor((~degenerate).astype(C_T.dtype))
        denom = denom + Tensor(degenerate.astype(C_T.dtype))
        return dot / denom * keep
    return dot / denom


def normalize_sim(f_s):
    """Map a cosine score from [-1, 1] onto [0, 1]."""
    return (1.0 + f_s) * 0.5


@dataclass
class WeightedFeatures:
    R_If: Tensor | None
    R_Tf: Tensor | None
    R_Mf: Tensor | None
    sim: Tensor

    def present(self) -> list[Tensor]:
        return [f for f in (self.R_If, self.R_Tf, self.R_Mf) if f is not None]


def _scale(weight: Tensor, feature: Tensor | None) -> Tensor | None:
    if feature is None:
        return None
    return mul(weight.reshape(weight.shape + (1,)), feature)


def weight_features(sim, R_I_incon: Tensor | None, R_T_incon: Tensor | None,
                    R_M: Tensor | None) -> WeightedFeatures:
    """Inconsistency features scale with ``sim``, the consistency feature with ``1 - sim``."""
    sim = as_tensor(sim)
    return WeightedFeatures(_scale(sim, R_I_incon), _scale(sim, R_T_incon),
                            _scale(1.0 - sim, R_M), sim)


class Classifier(Module):
    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.hidden = Linear(d_in, d_hidden, rng)
        self.out = Linear(d_hidden, 1, rng)

    def __call__(self, weighted: WeightedFeatures) -> Tensor:
        return classify(weighted, self)


def classify(weighted: WeightedFeatures, params: Classifier) -> Tensor:
    """Fake-class probability for each sample."""
    x = concat(weighted.present(), axis=-1)
    logit = params.out(relu(params.hidden(x)))
    return sigmoid(logit.reshape(logit.shape[:-1]))


def bce_loss(y, y_pred: Tensor, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy with the prediction clamped to ``[eps, 1 - eps]``."""
    y = as_tensor(np.asarray(y, dtype=y_pred.dtype))
    p = clip(y_pred, eps, 1.0 - eps)
    per_sample = -(y * log(p) + (1.0 - y) * log(1.0 - p))
    return per_sample.mean()
