"""Utterance-level language identification on top of the context encoder."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import Corpus
from .model import Wav2Vec2Encoder
from .nn import Linear, Module, parameter
from .numerics import Tensor

POOLING_MODES = ("average", "max", "avg_max", "avg_max_min", "cls_token")


def pooled_dim(mode: str, d: int) -> int:
    if mode not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {mode!r}; choose from {POOLING_MODES}")
    return {"avg_max": 2 * d, "avg_max_min": 3 * d}.get(mode, d)


def pool(c: Tensor, lengths, mode: str) -> Tensor:
    """Collapse (B, T, D) context to (B, D') using only the first ``lengths[b]`` rows.

    ``cls_token`` reads position 0, where the class token was prepended.
    """
    pooled_dim(mode, c.shape[-1])
    B, T, D = c.shape
    lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), (B,))
    if np.any(lengths < 1) or np.any(lengths > T):
        raise ValueError(f"valid lengths must lie in 1..{T}, got {lengths.tolist()}")
    if mode == "cls_token":
        return c[:, 0, :]
    valid = (np.arange(T)[None, :] < lengths[:, None])[..., None]
    parts = []
    if mode in ("average", "avg_max", "avg_max_min"):
        total = nx.where(valid, c, 0.0).sum(axis=1)
        parts.append(total / Tensor(lengths[:, None].astype(c.dtype)))
    if mode in ("max", "avg_max", "avg_max_min"):
        parts.append(nx.tmax(nx.where(valid, c, -np.inf), axis=1))
    if mode == "avg_max_min":
        parts.append(nx.tmin(nx.where(valid, c, np.inf), axis=1))
    return parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)


class ClassifierHead(Module):
    def __init__(self, pooled: int, num_languages: int, rng: np.random.Generator,
                 cls_dim: int | None = None):
        self.projection = Linear(pooled, num_languages, rng)
        self.cls_embedding = parameter(rng.normal(0, 0.02, cls_dim)) if cls_dim else None
        self.num_languages = num_languages

    def __call__(self, pooled: Tensor) -> Tensor:
        if pooled.shape[-1] != self.projection.weight.shape[0]:
            raise nx.ShapeError(f"head expects {self.projection.weight.shape[0]}-dim input, got {pooled.shape}")
        return self.projection(pooled)


def classify(pooled: Tensor, head: ClassifierHead) -> Tensor:
    """Language probabilities, softmax over the head's logits."""
    return nx.softmax(head(pooled), axis=-1)


class LIDModel(Module):
    """Encoder truncated after ``layer`` blocks, pooling, and a linear head."""

    def __init__(self, encoder: Wav2Vec2Encoder, num_languages: int, pooling: str = "average",
                 layer: int | None = None, seed: int = 0):
        cfg = encoder.cfg
        self.layer = cfg.n_layers if layer is None else layer
        if not 1 <= self.layer <= cfg.n_layers:
            raise IndexError(f"layer {self.layer} outside 1..{cfg.n_layers}")
        self.pooling = pooling
        self.encoder = encoder
        rng = np.random.default_rng([seed, 7])
        self.head = ClassifierHead(pooled_dim(pooling, cfg.c_dim), num_languages, rng,
                                   cls_dim=cfg.c_dim if pooling == "cls_token" else None)

    def logits(self, features: Tensor, lengths=None, rng=None) -> Tensor:
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.ndim == 2:
            x = x.reshape((1,) + x.shape)
        if lengths is None:
            lengths = np.full(x.shape[0], x.shape[1])
        lengths = np.asarray(lengths)
        if np.any(lengths // self.encoder.cfg.stack_r < 1):
            raise ValueError(f"utterance shorter than one stacked frame ({self.encoder.cfg.stack_r} frames)")
        z, padding = self.encoder.encode_features(x, lengths)
        out = self.encoder.context_encode(z, padding, rng=rng, num_layers=self.layer,
                                          prefix=self.head.cls_embedding)
        c = out.layers[-1]
        valid = lengths // self.encoder.cfg.stack_r
        if self.pooling == "cls_token":
            valid = valid + 1
        return self.head(pool(c, valid, self.pooling))

    def predict(self, features, lengths=None) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            with nx.no_grad():
                return np.argmax(self.logits(features, lengths).data, axis=-1)
        finally:
            self.train(was)


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # rows: true language, cols: predicted
    languages: list[str]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred"] + self.languages)
            for code, row in zip(self.languages, self.confusion):
                w.writerow([code] + [int(v) for v in row])


def evaluate_accuracy(corpus: Corpus, model: LIDModel, languages: list[str] | None = None,
                      max_frames: int | None = None) -> Evaluation:
    """Accuracy and confusion over whole utterances, one at a time."""
    languages = languages or corpus.languages
    if len(corpus.manifest) == 0:
        raise ValueError("cannot evaluate an empty split")
    unknown = set(corpus.languages) - set(languages)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} are outside the trained language set")
    if model.head.num_languages != len(languages):
        raise ValueError(f"head has {model.head.num_languages} outputs, expected {len(languages)}")
    confusion = np.zeros((len(languages), len(languages)), dtype=np.int64)
    for feats, entry in zip(corpus.features, corpus.manifest.entries):
        x = feats[:max_frames] if max_frames else feats
        pred = int(model.predict(x[None])[0])
        confusion[languages.index(entry.language), pred] += 1
    return Evaluation(float(np.trace(confusion) / confusion.sum()), confusion, list(languages))


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_rows(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
