"""Optimization loops, Adam with weight decay, learning-rate schedules and checkpoints."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import numerics as nx
from .data import Corpus, build_sampling_distribution, collate, sample_batch
from .features import FeatureStats, compute_feature_stats, num_frames, FeatureConfig
from .lid import LIDModel, evaluate_accuracy
from .losses import (ContrastiveConfig, LossWeights, PretrainLoss, contrastive_loss, cross_entropy,
                     diversity_loss, pretrain_loss)
from .model import ModelConfig, Wav2Vec2Encoder, apply_mask, sample_batch_mask
from .nn import Module
from .numerics import Tensor
from .quantizer import GumbelQuantizer, GumbelSchedule, codebook_usage, usage_entropy

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# schedule and optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSchedule:
    peak_lr: float
    warmup_updates: int
    total_updates: int
    decay: str = "linear"  # "linear" to zero at total, or "constant" after warmup
    weight_decay: float = 1e-2

    def __post_init__(self):
        if not self.peak_lr > 0:
            raise ValueError("peak_lr must be positive")
        if not 0 <= self.warmup_updates <= self.total_updates:
            raise ValueError("need 0 <= warmup_updates <= total_updates")
        if self.decay not in ("linear", "constant"):
            raise ValueError(f"unknown decay {self.decay!r}")


def lr_at(step: int, schedule: TrainSchedule) -> float:
    if not 0 <= step <= schedule.total_updates:
        raise ValueError(f"step {step} outside 0..{schedule.total_updates}")
    w = schedule.warmup_updates
    if step < w:
        return schedule.peak_lr * step / w
    if schedule.decay == "constant" or schedule.total_updates == w:
        return schedule.peak_lr
    return schedule.peak_lr * (schedule.total_updates - step) / (schedule.total_updates - w)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6


def adam_step(params: dict[str, Tensor], state: OptimizerState, lr: float, weight_decay: float = 0.0,
              decoupled: bool = True) -> None:
    """One bias-corrected Adam update in place; parameters without a gradient are left alone.

    With ``decoupled`` the decay is ``p -= lr * wd * p`` applied separately from
    the adaptive step, otherwise ``wd * p`` is added to the gradient.
    """
    live = [(n, p) for n, p in params.items() if p.grad is not None]
    for name, p in live:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"step {state.step + 1}: non-finite gradient in {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in live:
        g = p.grad.astype(p.dtype, copy=False)
        if weight_decay and not decoupled:
            g = g + weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if weight_decay and decoupled:
            p.data *= (1 - lr * weight_decay)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1
MAGIC = b"W2VLIDCK"


class CheckpointError(ValueError):
    pass


class ConfigConflictError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    optimizer: OptimizerState | None = None
    step: int = 0
    rng_state: dict | None = None
    feature_stats: FeatureStats | None = None
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def encoder_state(self) -> dict[str, np.ndarray]:
        return {k[len("encoder."):]: v for k, v in self.params.items() if k.startswith("encoder.")}


def _tensor_blobs(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.optimizer is not None:
        out += [(f"adam_m/{k}", v) for k, v in ckpt.optimizer.m.items()]
        out += [(f"adam_v/{k}", v) for k, v in ckpt.optimizer.v.items()]
    if ckpt.feature_stats is not None:
        out += [("stats/mean", ckpt.feature_stats.mean), ("stats/std", ckpt.feature_stats.std)]
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Single little-endian file: magic, version, JSON header, tensor blobs, SHA-256."""
    index, payload, offset = [], [], 0
    for name, arr in _tensor_blobs(ckpt):
        arr = np.ascontiguousarray(arr)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        index.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(data)})
        payload.append(data)
        offset += len(data)
    opt = None
    if ckpt.optimizer is not None:
        o = ckpt.optimizer
        opt = {"step": o.step, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps}
    header = {
        "kind": ckpt.kind,
        "model_config": ckpt.model_config.to_dict(),
        "step": ckpt.step,
        "optimizer": opt,
        "rng_state": ckpt.rng_state,
        "feature_frames": ckpt.feature_stats.num_frames_used if ckpt.feature_stats else None,
        "meta": ckpt.meta,
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", ckpt.format_version, len(head)) + head + b"".join(payload)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file or truncated header")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    version, head_len = struct.unpack("<II", body[len(MAGIC):len(MAGIC) + 8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {version} (expected {FORMAT_VERSION})")
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + head_len])
    blob = body[start + head_len:]
    tensors = {}
    for t in header["tensors"]:
        dtype = np.dtype("<" + t["dtype"])
        if t["offset"] + t["nbytes"] > len(blob) or t["nbytes"] != dtype.itemsize * int(np.prod(t["shape"])):
            raise CheckpointError(f"{path}: tensor {t['name']} lies outside the payload")
        arr = np.frombuffer(blob, dtype=dtype, count=int(np.prod(t["shape"])), offset=t["offset"])
        tensors[t["name"]] = arr.reshape(t["shape"]).astype(dtype.newbyteorder("="))
    cfg = ModelConfig.from_dict(header["model_config"])
    if expected_config is not None and expected_config != cfg:
        diff = {k: (v, getattr(cfg, k)) for k, v in expected_config.to_dict().items() if getattr(cfg, k) != v}
        raise ConfigConflictError(f"{path}: model config conflicts with expected (expected, found): {diff}")

    def group(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = OptimizerState(group("adam_m/"), group("adam_v/"), o["step"], o["beta1"], o["beta2"], o["eps"])
    stats = None
    if "stats/mean" in tensors:
        stats = FeatureStats(tensors["stats/mean"], tensors["stats/std"], header["feature_frames"])
    return Checkpoint(header["kind"], cfg, group("param/"), opt, header["step"], header["rng_state"],
                      stats, header["meta"], version)


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PretrainConfig:
    total_updates: int = 2000
    warmup_updates: int = 100
    peak_lr: float = 1e-3
    weight_decay: float = 1e-2
    decoupled_weight_decay: bool = True
    batch_size: int = 8
    crop_frames: int = 2000
    alpha: float = 0.5
    num_distractors: int = 20
    restrict_to_same_utterance: bool = True
    logit_temperature: float = 1.0
    lambda_diversity: float = 0.1
    tau_start: float = 2.0
    tau_end: float = 0.5
    tau_decay: float = 0.999
    grad_clip: float = 1.0
    stats_utterances: int = 50
    checkpoint_every: int = 0

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(self.peak_lr, self.warmup_updates, self.total_updates, "linear", self.weight_decay)

    def contrastive(self) -> ContrastiveConfig:
        return ContrastiveConfig(self.num_distractors, self.restrict_to_same_utterance, self.logit_temperature)

    def gumbel(self) -> GumbelSchedule:
        return GumbelSchedule(self.tau_start, self.tau_end, self.tau_decay)


class PretrainModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.encoder = Wav2Vec2Encoder(cfg, seed)
        self.quantizer = GumbelQuantizer(cfg.z_dim, cfg.proj_dim, cfg.num_groups, cfg.num_entries,
                                         np.random.default_rng([seed, 1]))

    @property
    def cfg(self) -> ModelConfig:
        return self.encoder.cfg


@dataclass
class PretrainStep:
    loss: PretrainLoss
    mask: np.ndarray
    indices: np.ndarray
    valid: np.ndarray


def pretrain_forward(model: PretrainModel, features: np.ndarray, lengths: np.ndarray, rng: np.random.Generator,
                     tau: float, contrastive: ContrastiveConfig, weights: LossWeights,
                     hard: bool = True) -> PretrainStep:
    """Mask, encode, quantize and score one batch of normalized log-mel crops."""
    enc, cfg = model.encoder, model.cfg
    x = Tensor(np.asarray(features, dtype=enc.feature_proj.weight.dtype))
    z, padding = enc.encode_features(x, lengths)
    B, T = z.shape[0], z.shape[1]
    valid = ~padding if padding is not None else np.ones((B, T), dtype=bool)
    stacked = enc.stacked_lengths(lengths, cfg.stack_r)
    mask = sample_batch_mask(stacked, T, cfg.mask_p, cfg.mask_m, rng)
    out = enc.context_encode(apply_mask(z, mask, enc.mask_embedding), padding, rng=rng)
    qo = model.quantizer(z, tau, train_mode=model.training, rng=rng, hard=hard)
    lm = contrastive_loss(out.c, qo.q, mask, contrastive, rng)
    ld = diversity_loss(qo.probs, valid)
    return PretrainStep(pretrain_loss(lm, ld, weights), mask, qo.indices, valid)


def _stats_from(corpus: Corpus, n: int) -> FeatureStats:
    # evenly spaced through the manifest so every language contributes
    total = len(corpus.features)
    idx = np.unique(np.linspace(0, total - 1, min(max(1, n), total)).round().astype(int))
    return compute_feature_stats([corpus.features[i] for i in idx])


def _write_jsonl(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()


def pretrain(model_cfg: ModelConfig, cfg: PretrainConfig, corpus: Corpus, seed: int = 0,
             out_dir=None, progress: Callable[[dict], None] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Self-supervised pre-training on a corpus of raw (unnormalized) log-mel features.

    Feature statistics come from ``stats_utterances`` utterances spread evenly
    over the manifest and are stored in the returned checkpoint.
    """
    if not corpus.languages:
        raise ValueError("pre-training needs at least one language")
    corpus.validate_buckets()
    stats = _stats_from(corpus, cfg.stats_utterances)
    data = corpus.normalized(stats)
    dist = build_sampling_distribution(corpus.manifest.hours(), cfg.alpha)
    rng = np.random.default_rng(seed)
    model = PretrainModel(model_cfg, seed)
    model.train()
    params = dict(model.named_parameters())
    state = OptimizerState()
    schedule, gumbel = cfg.schedule(), cfg.gumbel()
    ccfg, weights = cfg.contrastive(), LossWeights(cfg.lambda_diversity)
    out_dir = Path(out_dir) if out_dir is not None else None
    fh = open(out_dir / "metrics.jsonl", "a") if out_dir is not None else None
    metrics = []

    def snapshot(step):
        return Checkpoint("pretrain", model_cfg, {k: v.data.copy() for k, v in params.items()}, state, step,
                          rng.bit_generator.state, stats,
                          {"languages": corpus.languages, "seed": seed, "sampling_probs": dist.probs.tolist()})

    try:
        for step in range(cfg.total_updates):
            lr = lr_at(step, schedule)
            tau = gumbel.tau_at(step)
            batch = sample_batch(data, dist, cfg.batch_size, cfg.crop_frames, rng)
            model.zero_grad()
            res = pretrain_forward(model, batch.features, batch.lengths, rng, tau, ccfg, weights)
            total = res.loss.total.item()
            if not math.isfinite(total):
                raise NonFiniteError(f"step {step + 1}: non-finite loss (contrastive={res.loss.contrastive.item()}, "
                                     f"diversity={res.loss.diversity.item()})")
            nx.backward(res.loss.total)
            gnorm = clip_grad_norm(model.parameters(), cfg.grad_clip)
            adam_step(params, state, lr, schedule.weight_decay, cfg.decoupled_weight_decay)
            usage = codebook_usage(res.indices[res.valid], model_cfg.num_entries)
            rec = {"step": step + 1, "lr": lr, "tau": tau, "loss_total": total,
                   "loss_contrastive": res.loss.contrastive.item(), "loss_diversity": res.loss.diversity.item(),
                   "grad_norm": gnorm, "codebook_entropy": usage_entropy(usage)}
            metrics.append(rec)
            _write_jsonl(fh, rec)
            if progress:
                progress(rec)
            if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_{step + 1}.ckpt", snapshot(step + 1))
    finally:
        if fh is not None:
            fh.close()
    ckpt = snapshot(cfg.total_updates)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.ckpt", ckpt)
    return ckpt, metrics


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FinetuneConfig:
    total_updates: int = 300
    warmup_fraction: float = 0.1
    peak_lr: float = 1e-4
    weight_decay: float = 1e-2
    decoupled_weight_decay: bool = True
    batch_size: int = 8
    crop_seconds: float = 6.0
    pooling: str = "average"
    layer: int | None = None
    freeze_encoder: bool = False
    grad_clip: float = 1.0
    eval_every: int = 0  # updates between held-out evaluations; 0 = only at the end

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(self.peak_lr, int(round(self.warmup_fraction * self.total_updates)),
                             self.total_updates, "constant", self.weight_decay)

    def crop_frames(self, feature_cfg: FeatureConfig = FeatureConfig()) -> int:
        return num_frames(int(round(self.crop_seconds * feature_cfg.sample_rate)), feature_cfg)


def build_lid_model(init: Checkpoint | None, model_cfg: ModelConfig | None, num_languages: int,
                    cfg: FinetuneConfig, seed: int) -> LIDModel:
    if init is not None:
        model_cfg = init.model_config
    if model_cfg is None:
        raise ValueError("scratch initialization needs a model config")
    encoder = Wav2Vec2Encoder(model_cfg, seed)
    if init is not None:
        encoder.load_state_dict(init.encoder_state())
    return LIDModel(encoder, num_languages, cfg.pooling, cfg.layer, seed)


def finetune(init: Checkpoint | None, train: Corpus, cfg: FinetuneConfig, seed: int = 0,
             heldout: Corpus | None = None, model_cfg: ModelConfig | None = None, out_dir=None,
             languages: list[str] | None = None) -> tuple[Checkpoint, LIDModel, list[dict]]:
    """Cross-entropy training of encoder + head on raw-feature corpora.

    ``init=None`` is the scratch scenario: random encoder, statistics from the
    labeled training data. Otherwise encoder weights and statistics come from
    the pre-training checkpoint.
    """
    languages = list(languages or train.languages)
    missing = set(train.languages) - set(languages)
    if missing:
        raise ValueError(f"languages {sorted(missing)} in the data are absent from the head")
    stats = init.feature_stats if init is not None and init.feature_stats is not None \
        else compute_feature_stats(train.features)
    data = train.normalized(stats, languages)
    held = heldout.normalized(stats, languages) if heldout is not None else None
    model = build_lid_model(init, model_cfg, len(languages), cfg, seed)
    model_cfg = model.encoder.cfg
    model.train()
    params = {k: v for k, v in model.named_parameters()
              if not (cfg.freeze_encoder and k.startswith("encoder."))}
    state = OptimizerState()
    schedule = cfg.schedule()
    rng = np.random.default_rng([seed, 11])
    crop_frames = cfg.crop_frames()
    out_dir = Path(out_dir) if out_dir is not None else None
    fh = open(out_dir / "metrics.jsonl", "a") if out_dir is not None else None
    metrics: list[dict] = []
    order: list[int] = []
    try:
        for step in range(cfg.total_updates):
            if len(order) < cfg.batch_size:
                order.extend(rng.permutation(len(data.features)).tolist())
            idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
            batch = collate(data, idx, crop_frames, rng)
            model.zero_grad()
            logits = model.logits(Tensor(batch.features), batch.lengths, rng=rng)
            loss = cross_entropy(logits, batch.language_ids)
            if not math.isfinite(loss.item()):
                raise NonFiniteError(f"step {step + 1}: non-finite cross-entropy")
            nx.backward(loss)
            clip_grad_norm(list(params.values()), cfg.grad_clip)
            lr = lr_at(step, schedule)
            adam_step(params, state, lr, schedule.weight_decay, cfg.decoupled_weight_decay)
            rec = {"step": step + 1, "lr": lr, "loss_ce": loss.item(),
                   "train_batch_accuracy": float(np.mean(np.argmax(logits.data, -1) == batch.language_ids))}
            if held is not None and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                rec["accuracy"] = evaluate_accuracy(held, model, languages).accuracy
            metrics.append(rec)
            _write_jsonl(fh, rec)
        if held is not None:
            final = evaluate_accuracy(held, model, languages).accuracy
            if not metrics or "accuracy" not in metrics[-1]:
                rec = {"step": cfg.total_updates, "accuracy": final}
                metrics.append(rec)
                _write_jsonl(fh, rec)
    finally:
        if fh is not None:
            fh.close()
    meta = {"languages": languages, "pooling": cfg.pooling, "layer": model.layer, "seed": seed,
            "init": "scratch" if init is None else init.kind}
    ckpt = Checkpoint("finetune", model_cfg, {k: v.data.copy() for k, v in model.named_parameters()}, state,
                      cfg.total_updates, rng.bit_generator.state, stats, meta)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.ckpt", ckpt)
    return ckpt, model, metrics


def lid_model_from_checkpoint(ckpt: Checkpoint) -> LIDModel:
    if ckpt.kind != "finetune":
        raise CheckpointError(f"expected a fine-tuned checkpoint, got kind={ckpt.kind!r}")
    meta = ckpt.meta
    model = LIDModel(Wav2Vec2Encoder(ckpt.model_config), len(meta["languages"]), meta["pooling"], meta["layer"])
    model.load_state_dict(ckpt.params)
    model.eval()
    return model
