"""Contrastive + diversity pre-training objective and the LID cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass(frozen=True)
class ContrastiveConfig:
    num_distractors: int = 100
    restrict_to_same_utterance: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if self.num_distractors < 1:
            raise ValueError("num_distractors must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class LossWeights:
    lambda_diversity: float = 0.1

    def __post_init__(self):
        if self.lambda_diversity < 0:
            raise ValueError("lambda_diversity must be >= 0")


def sample_distractors(masked_steps, t: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` masked steps other than ``t``; with replacement only when too few exist."""
    pool = np.asarray([s for s in np.asarray(masked_steps).tolist() if s != t], dtype=np.int64)
    if pool.size == 0:
        raise ValueError(f"no masked step besides {t} to draw distractors from")
    replace = pool.size < k
    return rng.choice(pool, size=k, replace=replace)


def contrastive_from_candidates(c: Tensor, candidates: Tensor, temperature: float = 1.0) -> Tensor:
    """Mean of ``-log softmax(sim(c, candidates))[0]``; candidate 0 is the true target.

    ``c`` is (N, d) and ``candidates`` is (N, K + 1, d).
    """
    sims = nx.cosine_similarity(c.reshape(c.shape[0], 1, c.shape[1]), candidates, axis=-1)
    if temperature != 1.0:
        sims = sims * (1.0 / temperature)
    return -nx.log_softmax(sims, axis=-1)[:, 0].mean()


def contrastive_targets(mask: np.ndarray, cfg: ContrastiveConfig, rng: np.random.Generator):
    """Flat target positions and (N, K + 1) candidate positions into a (B * T') sequence.

    Utterances with a single masked step have no distractors and are skipped.
    """
    B, T = mask.shape
    targets, candidates = [], []
    if cfg.restrict_to_same_utterance:
        for b in range(B):
            steps = np.flatnonzero(mask[b])
            if steps.size < 2:
                continue
            for t in steps:
                d = sample_distractors(steps, int(t), cfg.num_distractors, rng)
                targets.append(b * T + t)
                candidates.append(np.concatenate([[b * T + t], b * T + d]))
    else:
        flat = np.flatnonzero(mask.reshape(-1))
        if flat.size >= 2:
            for pos in flat:
                d = sample_distractors(flat, int(pos), cfg.num_distractors, rng)
                targets.append(pos)
                candidates.append(np.concatenate([[pos], d]))
    if not targets:
        raise ValueError("mask leaves no step with distractors")
    return np.asarray(targets, dtype=np.int64), np.stack(candidates).astype(np.int64)


def contrastive_loss(c: Tensor, q: Tensor, mask: np.ndarray, cfg: ContrastiveConfig,
                     rng: np.random.Generator) -> Tensor:
    """Contrastive loss over masked steps of (B, T', d) context and quantized sequences."""
    if c.shape != q.shape:
        raise nx.ShapeError(f"context {c.shape} and targets {q.shape} must align")
    B, T, d = c.shape
    targets, cand = contrastive_targets(np.asarray(mask, dtype=bool), cfg, rng)
    cf, qf = c.reshape(B * T, d), q.reshape(B * T, d)
    return contrastive_from_candidates(cf[targets], qf[cand], cfg.temperature)


def diversity_loss(probs: Tensor, valid: np.ndarray | None = None, tol: float = 1e-4) -> Tensor:
    """Negative entropy of the averaged codebook distribution, divided by G * V.

    ``probs`` is (..., G, V) of noise-free softmax probabilities; ``valid``
    optionally selects which leading positions take part in the average.
    """
    G, V = probs.shape[-2:]
    flat = probs.reshape(-1, G, V)
    if valid is not None:
        flat = flat[np.flatnonzero(np.asarray(valid).reshape(-1))]
    if flat.shape[0] == 0:
        raise ValueError("diversity loss needs at least one position")
    if np.max(np.abs(flat.data.sum(axis=-1) - 1.0)) > tol:
        raise ValueError("codebook probabilities are not normalized")
    avg = flat.mean(axis=0)
    return nx.xlogx(avg).sum() * (1.0 / (G * V))


@dataclass
class PretrainLoss:
    total: Tensor
    contrastive: Tensor
    diversity: Tensor


def pretrain_loss(contrastive: Tensor, diversity: Tensor, weights: LossWeights) -> PretrainLoss:
    total = contrastive + diversity * weights.lambda_diversity if weights.lambda_diversity else contrastive
    return PretrainLoss(total, contrastive, diversity)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean ``-log p[target]`` with probabilities from a stable log-softmax of ``logits``."""
    targets = np.asarray(targets, dtype=np.int64)
    B, L = logits.shape
    if targets.shape != (B,):
        raise ValueError(f"expected {B} targets, got shape {targets.shape}")
    if np.any((targets < 0) | (targets >= L)):
        raise ValueError(f"target index outside [0, {L})")
    return -nx.log_softmax(logits, axis=-1)[np.arange(B), targets].mean()
