"""Product quantization with Gumbel-softmax selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .nn import Linear, Module, parameter
from .numerics import Tensor


@dataclass(frozen=True)
class GumbelSchedule:
    tau_start: float = 2.0
    tau_end: float = 0.5
    decay: float = 0.999

    def __post_init__(self):
        if not self.tau_start >= self.tau_end > 0:
            raise ValueError("need tau_start >= tau_end > 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    def tau_at(self, step: int) -> float:
        return max(self.tau_start * self.decay ** step, self.tau_end)


@dataclass
class QuantizerOutput:
    q: Tensor  # (..., d)
    soft_probs: Tensor  # (..., G, V) the selection distribution actually used
    probs: Tensor  # (..., G, V) softmax of logits without Gumbel noise
    indices: np.ndarray  # (..., G) selected entry per group


def _one_hot(idx: np.ndarray, n: int, dtype) -> np.ndarray:
    return (idx[..., None] == np.arange(n)).astype(dtype)


class GumbelQuantizer(Module):
    """``h``: project Z to d, score each group slice against its V entries, select, concat, project.

    Group logits are dot products between the projected slice and each entry of
    that group's codebook.
    """

    def __init__(self, z_dim: int, dim: int, groups: int, entries: int, rng: np.random.Generator):
        if dim % groups:
            raise nx.ConfigurationError(f"dim={dim} not divisible by groups={groups}")
        if entries < 2:
            raise nx.ConfigurationError("need at least 2 entries per group")
        self.groups, self.num_entries, self.entry_dim = groups, entries, dim // groups
        self.pre_linear = Linear(z_dim, dim, rng)
        self.codebook = parameter(rng.standard_normal((groups, entries, self.entry_dim)))
        self.post_linear = Linear(dim, dim, rng)

    def logits(self, z: Tensor) -> Tensor:
        lead = z.shape[:-1]
        n = int(np.prod(lead))
        G, dg = self.groups, self.entry_dim
        proj = self.pre_linear(z).reshape(n, G, dg).transpose(1, 0, 2)  # (G, N, dg)
        scores = nx.matmul(proj, self.codebook.transpose(0, 2, 1))  # (G, N, V)
        return scores.transpose(1, 0, 2).reshape(lead + (G, self.num_entries))

    def select(self, weights: Tensor) -> Tensor:
        """Mix codebook entries by (..., G, V) weights and concatenate groups."""
        lead = weights.shape[:-2]
        n = int(np.prod(lead))
        w = weights.reshape(n, self.groups, self.num_entries).transpose(1, 0, 2)
        picked = nx.matmul(w, self.codebook)  # (G, N, dg)
        return picked.transpose(1, 0, 2).reshape(lead + (self.groups * self.entry_dim,))

    def __call__(self, z: Tensor, tau: float, train_mode: bool | None = None,
                 rng: np.random.Generator | None = None, hard: bool = True) -> QuantizerOutput:
        """Quantize ``z``.

        In training, entries are chosen by Gumbel-perturbed argmax; with
        ``hard`` the forward pass uses the one-hot choice while gradients follow
        the relaxed sample. ``hard=False`` keeps the relaxed sample in the
        forward pass as well. Evaluation is a noise-free argmax.
        """
        if not tau > 0:
            raise ValueError(f"Gumbel temperature must be positive, got {tau}")
        train_mode = self.training if train_mode is None else train_mode
        logits = self.logits(z)
        probs = nx.softmax(logits, axis=-1)
        if train_mode:
            if rng is None:
                raise ValueError("training-mode quantization needs an rng")
            u = rng.uniform(np.finfo(np.float64).tiny, 1.0, logits.shape)
            gumbel = Tensor((-np.log(-np.log(u))).astype(logits.dtype))
            soft = nx.softmax((logits + gumbel) * (1.0 / tau), axis=-1)
            idx = np.argmax(soft.data, axis=-1)
            weights = nx.straight_through(_one_hot(idx, self.num_entries, soft.dtype), soft) if hard else soft
        else:
            idx = np.argmax(logits.data, axis=-1)
            soft = probs
            weights = Tensor(_one_hot(idx, self.num_entries, logits.dtype))
        return QuantizerOutput(self.post_linear(self.select(weights)), soft, probs, idx)


def codebook_usage(indices: np.ndarray, num_entries: int) -> np.ndarray:
    """Per-group selection frequencies, shape (G, V), from (..., G) indices."""
    idx = np.asarray(indices)
    if idx.size == 0:
        raise ValueError("codebook usage needs at least one selection")
    flat = idx.reshape(-1, idx.shape[-1])
    counts = np.stack([np.bincount(flat[:, g], minlength=num_entries) for g in range(flat.shape[1])])
    return counts / flat.shape[0]


def usage_entropy(usage: np.ndarray) -> float:
    """Mean per-group entropy (nats) of a usage histogram."""
    p = np.where(usage > 0, usage, 1.0)
    return float(-(usage * np.log(p)).sum(axis=-1).mean())
