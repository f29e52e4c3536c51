"""The full fusion head: fusion module, two filter branches, weighting, classifier."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import Classifier, WeightedFeatures, classify, cosine_sim, normalize_sim, weight_features
from .filtering import InconsistencyBranch
from .fusion import FusionModule
from .layers import Module
from .tensor import Tensor, as_tensor

# ablation flags in report order
ABLATIONS = ("no_image_branch", "no_text_branch", "no_fusion", "no_enhance", "no_similarity")
ABLATION_LABELS = {
    None: "MFF-Net",
    "no_image_branch": "w/o ImageBranch",
    "no_text_branch": "w/o TextBranch",
    "no_fusion": "w/o FeatureFusion",
    "no_enhance": "w/o EnhanceFusion",
    "no_similarity": "w/o Similarity",
}


@dataclass(frozen=True)
class Ablation:
    no_image_branch: bool = False
    no_text_branch: bool = False
    no_fusion: bool = False
    no_enhance: bool = False
    no_similarity: bool = False

    @classmethod
    def only(cls, name: str | None) -> "Ablation":
        return cls() if name is None else cls(**{name: True})

    def active(self) -> list[str]:
        return [name for name in ABLATIONS if getattr(self, name)]

    def label(self) -> str:
        active = self.active()
        if not active:
            return ABLATION_LABELS[None]
        return " + ".join(ABLATION_LABELS[a] for a in active)


@dataclass(frozen=True)
class ModelConfig:
    n: int = 16
    p: int = 16
    d_t: int = 32
    d_i: int = 32
    d_g: int = 16
    d_model: int = 64
    heads: int = 4
    d_hidden: int | None = None
    d_fused: int | None = None
    ln_eps: float = 1e-5
    # "half" holds sim at 0.5 when similarity is ablated; "unweighted" uses weight 1 everywhere
    similarity_off: str = "half"
    score_reduction: str = "context"
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        for name in ("n", "p", "d_t", "d_i", "d_g", "d_model", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.similarity_off not in ("half", "unweighted"):
            raise ValueError(f"similarity_off must be 'half' or 'unweighted', got {self.similarity_off!r}")
        if self.score_reduction not in ("context", "own"):
            raise ValueError(f"score_reduction must be 'context' or 'own', got {self.score_reduction!r}")

    @property
    def hidden(self) -> int:
        return self.d_hidden or self.d_model

    @property
    def fused(self) -> int:
        return self.d_fused or self.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["ablation"] = Ablation(**data.get("ablation", {}))
        return cls(**data)

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class Diagnostics:
    f_s: np.ndarray | None
    sim: np.ndarray
    r_is_text: np.ndarray | None
    r_is_image: np.ndarray | None
    r_incon_text: np.ndarray | None
    r_incon_image: np.ndarray | None


class MFFNet(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        if config.similarity_off not in ("half", "unweighted"):
            raise ValueError(f"similarity_off must be 'half' or 'unweighted', got {config.similarity_off!r}")
        ab = config.ablation
        self.config = config
        dm = config.d_model
        self.fusion = FusionModule(config.d_t, config.d_i, dm, config.heads, config.fused, rng,
                                   enhance=not ab.no_enhance, consistency=not ab.no_fusion,
                                   eps=config.ln_eps)
        self.image_branch = None if ab.no_image_branch else InconsistencyBranch(
            dm, config.heads, rng, config.score_reduction, config.ln_eps)
        self.text_branch = None if ab.no_text_branch else InconsistencyBranch(
            dm, config.heads, rng, config.score_reduction, config.ln_eps)
        self.classifier = Classifier(self.classifier_input_dim(), config.hidden, rng)

    def classifier_input_dim(self) -> int:
        ab = self.config.ablation
        parts = [not ab.no_image_branch, not ab.no_text_branch]
        dim = self.config.d_model * sum(parts)
        return dim + (0 if ab.no_fusion else self.config.fused)

    def named_parameters(self, prefix: str = ""):
        # config is plain data; skip it
        for name in ("fusion", "image_branch", "text_branch", "classifier"):
            value = getattr(self, name)
            if value is not None:
                yield from value.named_parameters(f"{prefix}{name}.")

    def similarity(self, C_T, C_I, strict: bool = True):
        """``(f_s, sim)``; ``f_s`` is None when similarity is ablated."""
        C_T = as_tensor(C_T)
        if self.config.ablation.no_similarity:
            value = 0.5 if self.config.similarity_off == "half" else 1.0
            return None, Tensor(np.full(C_T.shape[:-1], value, dtype=C_T.dtype))
        f_s = cosine_sim(C_T, C_I, strict=strict)
        return f_s, normalize_sim(f_s)

    def __call__(self, R_T, R_I, C_T, C_I, strict: bool = True,
                 sim_override: float | None = None) -> tuple[Tensor, Diagnostics]:
        return forward(self, R_T, R_I, C_T, C_I, strict=strict, sim_override=sim_override)


def _np(t: Tensor | None):
    return None if t is None else t.data


def forward(model: MFFNet, R_T, R_I, C_T, C_I, strict: bool = True,
            sim_override: float | None = None) -> tuple[Tensor, Diagnostics]:
    """Run one sample (``[n, d_t]`` ...) or a batch (``[B, n, d_t]`` ...) end to end."""
    R_T, R_I, C_T, C_I = (as_tensor(x) for x in (R_T, R_I, C_T, C_I))
    fused = model.fusion(R_T, R_I)
    image = model.image_branch(fused.image_proj, fused.r_ci_seq) if model.image_branch else None
    text = model.text_branch(fused.text_proj, fused.r_ct_seq) if model.text_branch else None

    f_s, sim = model.similarity(C_T, C_I, strict=strict)
    if sim_override is not None:
        sim = Tensor(np.full(C_T.shape[:-1], sim_override, dtype=C_T.dtype))
    if model.config.ablation.no_similarity and model.config.similarity_off == "unweighted":
        weighted = WeightedFeatures(_feature(image), _feature(text), fused.R_M, sim)
    else:
        weighted = weight_features(sim, _feature(image), _feature(text), fused.R_M)
    y_pred = classify(weighted, model.classifier)
    diag = Diagnostics(
        f_s=_np(f_s), sim=sim.data,
        r_is_text=_np(text.r_is if text else None), r_is_image=_np(image.r_is if image else None),
        r_incon_text=_np(text.r_incon if text else None),
        r_incon_image=_np(image.r_incon if image else None))
    return y_pred, diag


def _feature(branch):
    return None if branch is None else branch.feature


def ablation_parameter_groups(model: MFFNet) -> dict[str, int]:
    """Parameter counts each ablation flag removes from an otherwise full model."""
    cfg = model.config
    dm, dh, df = cfg.d_model, cfg.hidden, cfg.fused
    fusion = model.fusion
    size = lambda mod: 0 if mod is None else mod.num_parameters()  # noqa: E731
    tfn_full = fusion.tfn.num_parameters()
    tfn_small = ((dm + 1) ** 2) * df + df
    return {
        "no_image_branch": size(model.image_branch) + dm * dh,
        "no_text_branch": size(model.text_branch) + dm * dh,
        "no_fusion": size(fusion.fuse_rit) + size(fusion.pair2) + size(fusion.pair3)
        + tfn_full + df * dh,
        "no_enhance": size(fusion.pair2) + size(fusion.pair3) + tfn_full - tfn_small,
        "no_similarity": 0,
    }
