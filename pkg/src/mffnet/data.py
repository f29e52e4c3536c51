"""Feature providers: manifest-backed MFFT datasets, toy encoders, synthetic corpus.

A dataset on disk is a JSON-lines manifest whose first line is a header
``{"dims": {...}, "split": ...}`` followed by one record per sample::

    {"id": "...", "label": 0|1, "R_T": "...", "R_I": "...", "C_T": "...", "C_I": "..."}

Feature paths are relative to the manifest's directory. Anything that can
write MFFT files (for example a script running real text/image backbones) can
produce a dataset this package trains on.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import mfft

FEATURE_KEYS = ("R_T", "R_I", "C_T", "C_I")
DIM_KEYS = ("n", "p", "d_t", "d_i", "d_g")


class DatasetError(Exception):
    """Problem with a manifest or one of the feature files it references."""


class MissingFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


class BadMagicError(DatasetError):
    pass


@dataclass
class NewsSample:
    id: str
    label: int
    R_T: np.ndarray
    R_I: np.ndarray
    C_T: np.ndarray
    C_I: np.ndarray

    def dims(self) -> dict[str, int]:
        return {"n": self.R_T.shape[0], "p": self.R_I.shape[0], "d_t": self.R_T.shape[1],
                "d_i": self.R_I.shape[1], "d_g": self.C_T.shape[0]}


def _expected_shapes(dims: dict) -> dict[str, tuple[int, ...]]:
    return {"R_T": (dims["n"], dims["d_t"]), "R_I": (dims["p"], dims["d_i"]),
            "C_T": (dims["d_g"],), "C_I": (dims["d_g"],)}


def read_manifest(path: str | os.PathLike) -> tuple[dict, list[dict]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise DatasetError(f"{path}: manifest has no header line")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON-lines manifest ({exc})") from None
    dims = header.get("dims")
    if not isinstance(dims, dict) or any(k not in dims for k in DIM_KEYS):
        raise DatasetError(f"{path}: header must carry dims {list(DIM_KEYS)}")
    return header, records


def load_dataset(path: str | os.PathLike) -> Iterator[NewsSample]:
    """Yield samples in manifest order, validating every file against the header dims."""
    path = Path(path)
    header, records = read_manifest(path)
    shapes = _expected_shapes(header["dims"])
    root = path.parent
    seen: set[str] = set()
    for rec in records:
        sid = str(rec.get("id"))
        if sid in seen:
            raise DuplicateIdError(f"duplicate sample id {sid!r} in {path}")
        seen.add(sid)
        label = rec.get("label")
        if label not in (0, 1):
            raise DatasetError(f"sample {sid!r}: label must be 0 or 1, got {label!r}")
        arrays = {}
        for key in FEATURE_KEYS:
            fpath = root / rec[key]
            if not fpath.is_file():
                raise MissingFileError(f"sample {sid!r}: {key} file missing: {fpath}")
            try:
                arr = mfft.load_tensor(fpath)
            except mfft.FormatError as exc:
                cls = BadMagicError if "magic" in str(exc) else DatasetError
                raise cls(f"sample {sid!r}: {key} file {fpath}: {exc}") from None
            if arr.shape != shapes[key]:
                raise DimensionMismatchError(
                    f"sample {sid!r}: {key} has shape {arr.shape}, header dims require {shapes[key]}")
            arrays[key] = arr
        yield NewsSample(sid, int(label), **arrays)


def write_dataset(path: str | os.PathLike, samples: Iterable[NewsSample], dims: dict,
                  split: str, feature_dir: str = "features", dtype=np.float64) -> Path:
    """Write MFFT feature files plus a manifest; returns the manifest path."""
    path = Path(path)
    (path.parent / feature_dir).mkdir(parents=True, exist_ok=True)
    shapes = _expected_shapes(dims)
    lines = [json.dumps({"dims": {k: int(dims[k]) for k in DIM_KEYS}, "split": split},
                        sort_keys=True)]
    for s in samples:
        rec = {"id": s.id, "label": int(s.label)}
        for key in FEATURE_KEYS:
            arr = np.asarray(getattr(s, key), dtype=dtype)
            if arr.shape != shapes[key]:
                raise DimensionMismatchError(f"sample {s.id!r}: {key} shape {arr.shape} != {shapes[key]}")
            rel = f"{feature_dir}/{s.id}.{key}.mfft"
            mfft.save_tensor(path.parent / rel, arr)
            rec[key] = rel
        lines.append(json.dumps(rec, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass
class FeatureSet:
    """Stacked arrays for a whole split; rows line up with ``ids``."""

    ids: list[str]
    labels: np.ndarray
    R_T: np.ndarray
    R_I: np.ndarray
    C_T: np.ndarray
    C_I: np.ndarray

    @classmethod
    def from_samples(cls, samples: Iterable[NewsSample], dtype=np.float64) -> "FeatureSet":
        samples = list(samples)
        if not samples:
            return cls([], np.zeros(0, dtype=np.int64), *(np.zeros((0,), dtype) for _ in FEATURE_KEYS))
        stack = lambda key: np.stack([getattr(s, key) for s in samples]).astype(dtype)  # noqa: E731
        return cls([s.id for s in samples], np.array([s.label for s in samples], dtype=np.int64),
                   *(stack(k) for k in FEATURE_KEYS))

    @classmethod
    def load(cls, manifest: str | os.PathLike, dtype=np.float64) -> "FeatureSet":
        return cls.from_samples(load_dataset(manifest), dtype)

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index) -> "FeatureSet":
        index = np.asarray(index)
        return FeatureSet([self.ids[i] for i in index], self.labels[index], self.R_T[index],
                          self.R_I[index], self.C_T[index], self.C_I[index])

    def index_of(self, sample_id: str) -> int:
        try:
            return self.ids.index(sample_id)
        except ValueError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    def astype(self, dtype) -> "FeatureSet":
        return FeatureSet(list(self.ids), self.labels.copy(),
                          *(getattr(self, k).astype(dtype) for k in FEATURE_KEYS))

    def dims(self) -> dict[str, int]:
        return {"n": self.R_T.shape[1], "p": self.R_I.shape[1], "d_t": self.R_T.shape[2],
                "d_i": self.R_I.shape[2], "d_g": self.C_T.shape[1]}


# -- toy encoders ----------------------------------------------------------

TABLE_SIZE = 4096


def _token_index(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % TABLE_SIZE


TOKEN_LATENT = 32
MODALITIES = ("text", "image")


@lru_cache(maxsize=8)
def _token_table(seed: int) -> np.ndarray:
    table = np.random.default_rng([seed, 0x70E]).normal(size=(TABLE_SIZE, TOKEN_LATENT))
    table.setflags(write=False)
    return table


@lru_cache(maxsize=16)
def _mixing(dim: int, seed: int, modality: str) -> np.ndarray:
    rng = np.random.default_rng([seed, dim, MODALITIES.index(modality), 0x313])
    mixing = rng.normal(size=(TOKEN_LATENT, dim)) / np.sqrt(TOKEN_LATENT)
    mixing.setflags(write=False)
    return mixing


def toy_encode(tokens: Sequence[str | None], length: int, dim: int, seed: int,
               modality: str = "text") -> np.ndarray:
    """Deterministic ``[length, dim]`` features for a token list (text) or patch grid (image).

    Tokens are hashed into a frozen random table shared by both modalities and
    passed through a fixed per-modality ``tanh`` mixing layer, so the same token
    lands in related but different spaces for text and image. ``None`` tokens
    and positions past the end are zero.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    if len(tokens) > length:
        raise ValueError(f"{len(tokens)} tokens exceed the fixed length {length}")
    table = _token_table(seed)
    mixing = _mixing(dim, seed, modality)
    out = np.zeros((length, dim))
    for i, tok in enumerate(tokens):
        if tok is not None:
            out[i] = np.tanh(table[_token_index(tok)] @ mixing)
    return out


@lru_cache(maxsize=16)
def _global_projections(d_t: int, d_i: int, d_g: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, d_g, 0xC11])
    return rng.normal(size=(d_t, d_g)), rng.normal(size=(d_i, d_g))


def _pooled(x: np.ndarray) -> np.ndarray:
    rows = np.any(x != 0, axis=-1)
    return x[rows].mean(axis=0) if rows.any() else np.zeros(x.shape[-1])


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def toy_global_encode(R_T: np.ndarray, R_I: np.ndarray, latent: np.ndarray,
                      consistency: float, seed: int,
                      image_latent: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Joint-space global vectors standing in for a contrastive image-text encoder.

    Both sides mix a shared unit latent (weight ``consistency``) with a frozen
    random projection of their own pooled semantics (weight ``1 - consistency``).
    At consistency 1 the two vectors coincide; at 0 they are unrelated. Passing
    ``image_latent`` gives the image side its own latent instead.
    """
    if not 0.0 <= consistency <= 1.0:
        raise ValueError(f"consistency must lie in [0, 1], got {consistency}")
    d_g = latent.shape[0]
    proj_t, proj_i = _global_projections(R_T.shape[1], R_I.shape[1], d_g, seed)
    z_t = _unit(latent)
    z_i = z_t if image_latent is None else _unit(image_latent)
    c_t = consistency * z_t + (1.0 - consistency) * _unit(_pooled(R_T) @ proj_t)
    c_i = consistency * z_i + (1.0 - consistency) * _unit(_pooled(R_I) @ proj_i)
    return c_t, c_i


# -- synthetic corpus ------------------------------------------------------

KINDS = ("real", "local_image", "local_text", "global")


@dataclass
class SynthConfig:
    """Desk-scale synthetic news corpus.

    Real items draw text tokens and image patches from one topic. Fake items are
    either *localized* (a few image patches, or a few text tokens, swapped for
    off-topic content while the item stays globally consistent) or *global* (the
    whole image drawn from another topic, with a mismatched global latent).
    ``gamma`` sets how strongly fakes depart from real items; its effect
    saturates at 1 and 0 makes the classes identically distributed.
    """

    train_real: int = 200
    train_fake: int = 200
    test_real: int = 50
    test_fake: int = 50
    gamma: float = 2.0
    local_share: float = 0.5
    text_share: float = 0.0
    perturb_fraction: float = 0.25
    noise: float = 0.0
    consistency: float = 0.9
    n: int = 16
    p: int = 16
    d_t: int = 32
    d_i: int = 32
    d_g: int = 16
    vocab: int = 48
    topic_size: int = 1
    filler_vocab: int = 64
    filler_rate: float = 0.25
    min_length: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        for name in ("local_share", "text_share", "perturb_fraction", "filler_rate", "consistency"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if min(self.train_real, self.train_fake, self.test_real, self.test_fake) < 0:
            raise ValueError("sample counts must be non-negative")
        if self.n < 2 or self.p < 1 or self.topic_size < 1:
            raise ValueError("need n >= 2, p >= 1 and topic_size >= 1")
        k = round(self.perturb_fraction * max(self.p, self.n))
        if 2 * self.topic_size + k > self.vocab:
            raise ValueError("vocab too small for two disjoint topics plus off-topic content")

    @property
    def dims(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in DIM_KEYS}


@dataclass
class SynthItem:
    sample: NewsSample
    kind: str
    perturbed_patches: list[int] = field(default_factory=list)
    perturbed_tokens: list[int] = field(default_factory=list)

    def sidecar_record(self) -> dict:
        return {"id": self.sample.id, "kind": self.kind,
                "perturbed_patches": self.perturbed_patches,
                "perturbed_tokens": self.perturbed_tokens}


def _concept(c) -> str:
    return f"concept:{int(c)}"


def _swap(seq: list, candidates: np.ndarray, hits: np.ndarray, replacement: np.ndarray) -> list[int]:
    done = []
    for idx, c, hit in zip(candidates, replacement, hits):
        if hit:
            seq[int(idx)] = _concept(c)
            done.append(int(idx))
    return sorted(done)


def _draw_item(cfg: SynthConfig, rng: np.random.Generator, sid: str, kind: str) -> SynthItem:
    strength = min(cfg.gamma, 1.0)
    concepts = rng.permutation(cfg.vocab)
    topic = concepts[:cfg.topic_size]
    other_topic = concepts[cfg.topic_size:2 * cfg.topic_size]
    off_topic = concepts[2 * cfg.topic_size:]

    length = int(rng.integers(cfg.min_length or cfg.n, cfg.n + 1))
    text = [f"word:{rng.integers(cfg.filler_vocab)}" if rng.random() < cfg.filler_rate
            else _concept(rng.choice(topic)) for _ in range(length)]
    patches = [_concept(c) for c in rng.choice(topic, size=cfg.p)]
    latent = rng.normal(size=cfg.d_g)

    # every kind consumes the same draws so the stream does not depend on kind or gamma
    k_img = round(cfg.perturb_fraction * cfg.p)
    img_hits = rng.random(k_img) < strength
    img_idx = rng.choice(cfg.p, size=k_img, replace=False)
    img_new = rng.choice(off_topic, size=k_img, replace=False)
    k_txt = round(cfg.perturb_fraction * length)
    txt_hits = rng.random(k_txt) < strength
    txt_idx = rng.choice(length, size=k_txt, replace=False)
    txt_new = rng.choice(off_topic, size=k_txt, replace=False)
    global_hit = rng.random() < strength
    global_patches = [_concept(c) for c in rng.choice(other_topic, size=cfg.p)]
    alt_latent = rng.normal(size=cfg.d_g)

    image_latent = None
    consistency = cfg.consistency
    item_patches: list[int] = []
    item_tokens: list[int] = []
    if kind == "local_image":
        item_patches = _swap(patches, img_idx, img_hits, img_new)
    elif kind == "local_text":
        item_tokens = _swap(text, txt_idx, txt_hits, txt_new)
    elif kind == "global" and global_hit:
        patches = global_patches
        image_latent = alt_latent
        consistency = 0.0

    R_T = toy_encode(text, cfg.n, cfg.d_t, cfg.seed, "text")
    R_I = toy_encode(patches, cfg.p, cfg.d_i, cfg.seed, "image")
    C_T, C_I = toy_global_encode(R_T, R_I, latent, consistency, cfg.seed, image_latent)
    if cfg.noise > 0:
        text_rows = np.abs(R_T).sum(-1, keepdims=True) > 0
        R_T = R_T + cfg.noise * rng.normal(size=R_T.shape) * text_rows
        R_I = R_I + cfg.noise * rng.normal(size=R_I.shape)
        C_T = C_T + cfg.noise * rng.normal(size=C_T.shape) / np.sqrt(cfg.d_g)
        C_I = C_I + cfg.noise * rng.normal(size=C_I.shape) / np.sqrt(cfg.d_g)
    label = 0 if kind == "real" else 1
    return SynthItem(NewsSample(sid, label, R_T, R_I, C_T, C_I), kind, item_patches, item_tokens)


def synth_items(cfg: SynthConfig, split: str) -> list[SynthItem]:
    """Deterministically generate one split with the classes shuffled together."""
    cfg.validate()
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    n_real = cfg.train_real if split == "train" else cfg.test_real
    n_fake = cfg.train_fake if split == "train" else cfg.test_fake
    rng = np.random.default_rng([cfg.seed, 0 if split == "train" else 1])
    n_local = round(cfg.local_share * n_fake)
    n_text = round(cfg.text_share * n_local)
    kinds = (["real"] * n_real + ["local_image"] * (n_local - n_text) + ["local_text"] * n_text
             + ["global"] * (n_fake - n_local))
    kinds = [kinds[i] for i in rng.permutation(len(kinds))]
    return [_draw_item(cfg, rng, f"{split}-{i:05d}", kind) for i, kind in enumerate(kinds)]


def generate_synth(cfg: SynthConfig, out_dir: str | os.PathLike) -> dict[str, Path]:
    """Write train/test manifests, MFFT features, the sidecar and the config used."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    sidecar_lines = []
    for split in ("train", "test"):
        items = synth_items(cfg, split)
        paths[split] = write_dataset(out / f"{split}.jsonl", (it.sample for it in items),
                                     cfg.dims, split)
        sidecar_lines += [json.dumps(it.sidecar_record(), sort_keys=True) for it in items]
    paths["sidecar"] = out / "sidecar.jsonl"
    paths["sidecar"].write_text("\n".join(sidecar_lines) + "\n", encoding="utf-8")
    paths["config"] = out / "synth_config.json"
    paths["config"].write_text(json.dumps(asdict(cfg), sort_keys=True, indent=2) + "\n",
                               encoding="utf-8")
    return paths


def read_sidecar(path: str | os.PathLike) -> dict[str, dict]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["id"]] = rec
    return out


def synth_feature_sets(cfg: SynthConfig, dtype=np.float64):
    """In-memory variant of :func:`generate_synth`: ``(train, test, sidecar)``."""
    train = synth_items(cfg, "train")
    test = synth_items(cfg, "test")
    sidecar = {it.sample.id: it.sidecar_record() for it in train + test}
    return (FeatureSet.from_samples((it.sample for it in train), dtype),
            FeatureSet.from_samples((it.sample for it in test), dtype), sidecar)
