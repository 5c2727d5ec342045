"""Log-mel wav2vec encoder: time-stacking feature encoder, span masking, transformer context encoder."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numerics as nx
from .nn import LayerNorm, Linear, Module, parameter
from .numerics import ConfigurationError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    f_in: int = 80
    stack_r: int = 4
    z_dim: int = 512
    c_dim: int = 1024
    n_layers: int = 24
    n_heads: int = 16
    ffn_dim: int = 4096
    conv_kernel: int = 48
    conv_groups: int = 16
    proj_dim: int = 768
    mask_p: float = 0.065
    mask_m: int = 5
    num_groups: int = 2
    num_entries: int = 320
    dropout: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("dropout", "mask_p"):
                if not 0 <= value <= 1:
                    raise ConfigurationError(f"{f.name} must lie in [0, 1], got {value}")
            elif not value > 0:
                raise ConfigurationError(f"{f.name} must be positive, got {value}")
        if self.c_dim % self.n_heads:
            raise ConfigurationError(f"c_dim={self.c_dim} not divisible by n_heads={self.n_heads}")
        if self.c_dim % self.conv_groups:
            raise ConfigurationError(f"c_dim={self.c_dim} not divisible by conv_groups={self.conv_groups}")
        if self.proj_dim % self.num_groups:
            raise ConfigurationError(f"proj_dim={self.proj_dim} not divisible by num_groups={self.num_groups}")
        if self.num_entries < 2:
            raise ConfigurationError("num_entries must be >= 2")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(z_dim=64, c_dim=64, n_layers=4, n_heads=2, ffn_dim=256, conv_kernel=8,
                    conv_groups=4, proj_dim=48, num_entries=32)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# time stacking and masking
# ---------------------------------------------------------------------------

def time_stack(x: Tensor, r: int) -> Tensor:
    """Concatenate ``r`` consecutive frames: (..., T, F) -> (..., T // r, F * r).

    Trailing ``T mod r`` frames are dropped.
    """
    T, F = x.shape[-2], x.shape[-1]
    if T < r:
        raise ValueError(f"need at least {r} frames to stack, got {T}")
    keep = (T // r) * r
    lead = x.shape[:-2]
    if keep != T:
        x = x[(Ellipsis, slice(0, keep), slice(None))]
    return x.reshape(lead + (keep // r, F * r))


@dataclass
class MaskSpec:
    masked: np.ndarray  # bool per time step
    start_prob: float
    span: int

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)


def sample_mask(seq_len: int, mask_p: float, mask_m: int, rng: np.random.Generator) -> MaskSpec:
    """Bernoulli span starts, each masking ``mask_m`` steps; redraws until something is masked."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if mask_p <= 0:
        raise ValueError("mask_p must be positive to guarantee a masked step")
    while True:
        starts = np.flatnonzero(rng.random(seq_len) < mask_p)
        if starts.size:
            break
    masked = np.zeros(seq_len, dtype=bool)
    for s in starts:
        masked[s:s + mask_m] = True
    return MaskSpec(masked, mask_p, mask_m)


def sample_batch_mask(lengths: np.ndarray, total: int, mask_p: float, mask_m: int,
                      rng: np.random.Generator) -> np.ndarray:
    """(B, total) mask; steps at or beyond each valid length are never masked."""
    out = np.zeros((len(lengths), total), dtype=bool)
    for b, n in enumerate(lengths):
        if n > 0:
            out[b, :n] = sample_mask(int(n), mask_p, mask_m, rng).masked
    return out


def apply_mask(z: Tensor, masked: np.ndarray, mask_embedding: Tensor) -> Tensor:
    masked = np.asarray(masked, dtype=bool)
    if masked.shape != z.shape[:-1]:
        raise IndexError(f"mask shape {masked.shape} does not match sequence shape {z.shape[:-1]}")
    if not masked.any():
        return z
    return nx.where(masked[..., None], mask_embedding, z)


# ---------------------------------------------------------------------------
# transformer
# ---------------------------------------------------------------------------

_NEG = -1e9


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)
        self.heads = heads
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor, key_bias: np.ndarray | None) -> Tensor:
        B, T, D = x.shape
        H, dh = self.heads, D // self.heads
        qkv = self.qkv(x).reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = nx.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        if key_bias is not None:
            scores = scores + Tensor(key_bias.astype(scores.dtype))
        weights = nx.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = nx.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, T, D)
        return self.out(ctx)


class TransformerBlock(Module):
    """Pre-norm block: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.ln_attn = LayerNorm(cfg.c_dim, cfg.ln_eps)
        self.attn = SelfAttention(cfg.c_dim, cfg.n_heads, rng)
        self.ln_ffn = LayerNorm(cfg.c_dim, cfg.ln_eps)
        self.ffn_in = Linear(cfg.c_dim, cfg.ffn_dim, rng)
        self.ffn_out = Linear(cfg.ffn_dim, cfg.c_dim, rng)
        self.dropout = cfg.dropout
        self.calls = 0

    def __call__(self, x: Tensor, key_bias, rng) -> Tensor:
        self.calls += 1
        h = nx.dropout(self.attn(self.ln_attn(x), key_bias), self.dropout, rng, self.training)
        x = x + h
        h = self.ffn_out(nx.dropout(nx.gelu(self.ffn_in(self.ln_ffn(x))), self.dropout, rng, self.training))
        return x + nx.dropout(h, self.dropout, rng, self.training)


class PositionalConv(Module):
    """Grouped temporal convolution + GELU, added back to the input, then layer norm."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        std = math.sqrt(4.0 / (cfg.conv_kernel * cfg.c_dim))
        self.weight = parameter(rng.normal(0, std, (cfg.c_dim, cfg.c_dim // cfg.conv_groups, cfg.conv_kernel)))
        self.bias = parameter(np.zeros(cfg.c_dim))
        self.groups = cfg.conv_groups
        self.ln = LayerNorm(cfg.c_dim, cfg.ln_eps)

    def __call__(self, x: Tensor) -> Tensor:
        return self.ln(x + nx.gelu(nx.conv1d_grouped(x, self.weight, self.bias, self.groups)))


@dataclass
class EncoderOutput:
    c: Tensor | None  # (B, T', proj_dim), None when stopped early
    layers: list[Tensor]  # outputs of the evaluated blocks, width c_dim


class Wav2Vec2Encoder(Module):
    """Feature encoder ``f`` (stack + linear) and context encoder ``g``."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.feature_proj = Linear(cfg.f_in * cfg.stack_r, cfg.z_dim, rng)
        self.mask_embedding = parameter(rng.uniform(0, 1, cfg.z_dim))
        self.context_in = Linear(cfg.z_dim, cfg.c_dim, rng)
        self.context_ln = LayerNorm(cfg.c_dim, cfg.ln_eps)
        self.pos_conv = PositionalConv(cfg, rng)
        self.blocks = [TransformerBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.final_proj = Linear(cfg.c_dim, cfg.proj_dim, rng)

    @staticmethod
    def stacked_lengths(lengths: np.ndarray, r: int) -> np.ndarray:
        return np.asarray(lengths) // r

    def feature_encode(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.cfg.f_in:
            raise nx.ShapeError(f"expected {self.cfg.f_in}-dim frames, got {x.shape}")
        return self.feature_proj(time_stack(x, self.cfg.stack_r))

    def context_encode(self, z: Tensor, padding: np.ndarray | None = None, rng=None,
                       num_layers: int | None = None, prefix: Tensor | None = None,
                       keep_layers: bool = False) -> EncoderOutput:
        """Run ``g`` over (B, T', z_dim).

        ``padding`` marks padded steps (True). ``num_layers`` stops after that
        many blocks and skips the final projection. ``prefix`` is a c_dim vector
        prepended at position 0 ahead of the transformer blocks.
        """
        cfg = self.cfg
        if z.shape[-1] != cfg.z_dim:
            raise nx.ShapeError(f"expected z_dim={cfg.z_dim}, got {z.shape}")
        B, T = z.shape[0], z.shape[1]
        x = self.context_ln(self.context_in(z))
        if padding is not None and padding.any():
            x = nx.where(padding[..., None], 0.0, x)
        x = self.pos_conv(x)
        if prefix is not None:
            cls = prefix.reshape(1, 1, cfg.c_dim) + Tensor(np.zeros((B, 1, cfg.c_dim), dtype=x.dtype))
            x = nx.concat([cls, x], axis=1)
            if padding is not None:
                padding = np.concatenate([np.zeros((B, 1), dtype=bool), padding], axis=1)
        key_bias = None
        if padding is not None and padding.any():
            key_bias = np.where(padding, _NEG, 0.0)[:, None, None, :]
        stop = cfg.n_layers if num_layers is None else num_layers
        if not 1 <= stop <= cfg.n_layers:
            raise IndexError(f"layer {stop} outside 1..{cfg.n_layers}")
        layers = []
        for block in self.blocks[:stop]:
            x = block(x, key_bias, rng)
            if keep_layers:
                layers.append(x)
        if not keep_layers:
            layers.append(x)
        c = self.final_proj(x) if stop == cfg.n_layers and num_layers is None else None
        return EncoderOutput(c, layers)

    def encode_features(self, x: Tensor, lengths: np.ndarray | None = None):
        """Zero padded frames, stack, project; returns Z and its padding mask (or None)."""
        if lengths is None:
            return self.feature_encode(x), None
        frame_pad = np.arange(x.shape[1])[None, :] >= np.asarray(lengths)[:, None]
        if frame_pad.any():
            x = nx.where(frame_pad[..., None], 0.0, x)
        z = self.feature_encode(x)
        stacked = self.stacked_lengths(lengths, self.cfg.stack_r)
        padding = np.arange(z.shape[1])[None, :] >= stacked[:, None]
        return z, (padding if padding.any() else None)


def extract_layer_output(out: EncoderOutput, k: int) -> Tensor:
    """Output of block ``k`` (1-based) from an encoder run with ``keep_layers``."""
    if not 1 <= k <= len(out.layers):
        raise IndexError(f"layer {k} outside 1..{len(out.layers)}")
    return out.layers[k - 1]
