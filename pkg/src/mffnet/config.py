"""Run configuration: flat dotted keys from a JSON file, overridable by flags."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .data import SynthConfig
from .model import Ablation, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    data_dir: str = "data/synth"
    run_dir: str = "runs/default"
    checkpoint: str | None = None
    train_manifest: str | None = None
    eval_manifest: str | None = None
    sidecar: str | None = None

    def train_path(self) -> Path:
        return Path(self.train_manifest or os.path.join(self.data_dir, "train.jsonl"))

    def eval_path(self) -> Path:
        return Path(self.eval_manifest or os.path.join(self.data_dir, "test.jsonl"))

    def sidecar_path(self) -> Path:
        return Path(self.sidecar or os.path.join(self.data_dir, "sidecar.jsonl"))

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint or os.path.join(self.run_dir, "checkpoint.mfft"))


@dataclass
class EvalConfig:
    threshold: float = 0.5


@dataclass
class GradcheckConfig:
    seeds: int = 5
    n: int = 3
    p: int = 3
    d_model: int = 8
    heads: int = 2
    tolerance: float = 1e-4
    step: float = 1e-5
    max_coords: int = 24


HELP = {
    "model.n": "text sequence length (tokens, zero-padded)",
    "model.p": "image sequence length (patches)",
    "model.d_t": "text semantic feature width",
    "model.d_i": "image semantic feature width",
    "model.d_g": "global (joint-space) feature width",
    "model.d_model": "common model width after projection",
    "model.heads": "attention heads; d_k = d_model / heads",
    "model.d_hidden": "classifier hidden width (default: d_model)",
    "model.d_fused": "width of the projected tensor-fusion feature (default: d_model)",
    "model.ln_eps": "layer-norm epsilon",
    "model.similarity_off": "with ablation.no_similarity: 'half' fixes sim=0.5, 'unweighted' uses weight 1",
    "model.score_reduction": "'context' sums similarity rows per own position, 'own' sums columns",
    "ablation.no_image_branch": "drop the image inconsistency branch",
    "ablation.no_text_branch": "drop the text inconsistency branch",
    "ablation.no_fusion": "drop the consistency feature (fusion, enhancement, tensor fusion)",
    "ablation.no_enhance": "feed r_it straight into tensor fusion, skipping enhancement pairs",
    "ablation.no_similarity": "replace the cosine-similarity weight with a constant",
    "train.batch_size": "mini-batch size",
    "train.epochs": "number of epochs",
    "train.learning_rate": "Adam learning rate",
    "train.beta1": "Adam first-moment decay",
    "train.beta2": "Adam second-moment decay",
    "train.adam_eps": "Adam denominator epsilon",
    "train.seed": "seed for initialisation and batch order",
    "train.precision": "float64 or float32",
    "train.grad_clip": "clip the global gradient norm to this value (off when unset)",
    "train.strict_similarity": "error on zero-norm global features instead of using sim=0.5",
    "synth.train_real": "real items in the train split",
    "synth.train_fake": "fake items in the train split",
    "synth.test_real": "real items in the test split",
    "synth.test_fake": "fake items in the test split",
    "synth.gamma": "consistency gap between real and fake items (0 = indistinguishable)",
    "synth.local_share": "share of fakes with localized (rather than global) inconsistency",
    "synth.text_share": "share of localized fakes perturbed in the text instead of the image",
    "synth.perturb_fraction": "fraction of patches/tokens swapped in a localized fake",
    "synth.noise": "Gaussian noise level added to all features",
    "synth.consistency": "shared-latent weight of global features for consistent items",
    "synth.n": "text length",
    "synth.p": "image patches",
    "synth.d_t": "text feature width",
    "synth.d_i": "image feature width",
    "synth.d_g": "global feature width",
    "synth.vocab": "number of concepts",
    "synth.topic_size": "concepts per topic",
    "synth.filler_vocab": "number of filler words",
    "synth.filler_rate": "probability that a text token is a filler word",
    "synth.min_length": "shortest text before padding (default: n, i.e. fixed length)",
    "synth.seed": "generator seed",
    "eval.threshold": "probability at or above which a prediction counts as fake",
    "gradcheck.seeds": "number of random seeds for the gradient check",
    "gradcheck.n": "toy text length",
    "gradcheck.p": "toy image length",
    "gradcheck.d_model": "toy model width",
    "gradcheck.heads": "toy head count",
    "gradcheck.tolerance": "maximum relative error (relaxed to 1e-2 in float32)",
    "gradcheck.step": "central-difference step",
    "gradcheck.max_coords": "coordinates probed per parameter tensor",
    "paths.data_dir": "dataset directory (train.jsonl, test.jsonl, sidecar.jsonl)",
    "paths.run_dir": "output directory for checkpoints, logs, reports and figures",
    "paths.checkpoint": "checkpoint file (default: <run_dir>/checkpoint.mfft)",
    "paths.train_manifest": "training manifest (default: <data_dir>/train.jsonl)",
    "paths.eval_manifest": "evaluation manifest (default: <data_dir>/test.jsonl)",
    "paths.sidecar": "synthetic ground-truth sidecar (default: <data_dir>/sidecar.jsonl)",
}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    ablation: Ablation = field(default_factory=Ablation)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(ablation=self.ablation, **self.model)

    def flat(self) -> dict[str, Any]:
        out = {}
        for key in HELP:
            section, name = key.split(".")
            out[key] = _section(self, section)[name]
        return out


_MODEL_FIELDS = {f.name: f for f in fields(ModelConfig) if f.name != "ablation"}
_SECTIONS = {"ablation": Ablation, "train": TrainConfig, "synth": SynthConfig,
             "eval": EvalConfig, "gradcheck": GradcheckConfig, "paths": PathsConfig}


def _section(cfg: RunConfig, section: str) -> dict:
    if section == "model":
        base = {name: f.default for name, f in _MODEL_FIELDS.items()}
        base.update(cfg.model)
        return base
    return dataclasses.asdict(getattr(cfg, section))


def field_type(key: str) -> str:
    """The annotation string of a dotted key, e.g. ``'int | None'``."""
    section, name = key.split(".")
    if section == "model":
        return str(_MODEL_FIELDS[name].type)
    return str({f.name: f for f in fields(_SECTIONS[section])}[name].type)


def coerce(key: str, value):
    kind = field_type(key)
    optional = "None" in kind
    if isinstance(value, str):
        text = value.strip()
        if optional and text.lower() in ("none", "null", ""):
            return None
        try:
            if kind.startswith("bool"):
                if text.lower() in ("1", "true", "yes", "on"):
                    return True
                if text.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
            if kind.startswith("int"):
                return int(text)
            if kind.startswith("float"):
                return float(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
        return text
    if value is None:
        if not optional:
            raise ConfigError(f"{key} may not be null")
        return None
    if kind.startswith("bool") and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if kind.startswith("int") and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if kind.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if kind.startswith("str") and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def build_config(overrides: dict[str, Any]) -> RunConfig:
    """Apply flat dotted overrides to the defaults; unknown keys are rejected."""
    unknown = sorted(set(overrides) - set(HELP))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    sections: dict[str, dict] = {}
    for key, value in overrides.items():
        section, name = key.split(".")
        sections.setdefault(section, {})[name] = coerce(key, value)
    cfg = RunConfig(model=sections.get("model", {}))
    for section, cls in _SECTIONS.items():
        if section in sections:
            setattr(cfg, section, cls(**sections[section]))
    try:
        cfg.train.validate()
        cfg.synth.validate()
        cfg.model_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config_file(path: str | os.PathLike) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object of dotted keys")
    return data
