"""Layer-probing and pooling-ablation harnesses built on :func:`finetune`."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .data import Corpus
from .lid import POOLING_MODES, write_rows
from .training import Checkpoint, FinetuneConfig, finetune


def _final_accuracy(metrics: list[dict]) -> float:
    return next(r["accuracy"] for r in reversed(metrics) if "accuracy" in r)


def probe_layers(init: Checkpoint, layers, train: Corpus, heldout: Corpus, cfg: FinetuneConfig,
                 seed: int = 0, out_csv=None, progress=None) -> list[tuple[int, float]]:
    """Fine-tune one classifier per block ``k`` reading that block's output.

    Returns ``(k, held-out accuracy)`` rows in the order given.
    """
    n_layers = init.model_config.n_layers
    layers = [int(k) for k in layers]
    bad = [k for k in layers if not 1 <= k <= n_layers]
    if bad:
        raise IndexError(f"layers {bad} outside 1..{n_layers}")
    rows = []
    for k in layers:
        _, _, metrics = finetune(init, train, dataclasses.replace(cfg, layer=k), seed, heldout,
                                 languages=init.meta.get("languages"))
        rows.append((k, _final_accuracy(metrics)))
        if progress:
            progress(rows[-1])
    if out_csv is not None:
        write_rows(Path(out_csv), ["layer", "accuracy"], rows)
    return rows


def ablate_pooling(init: Checkpoint, train: Corpus, heldout: Corpus, cfg: FinetuneConfig, seed: int = 0,
                   modes=POOLING_MODES, out_csv=None, progress=None) -> list[tuple[str, float]]:
    """One fine-tune per pooling mode, identical budget and seed."""
    rows = []
    for mode in modes:
        _, _, metrics = finetune(init, train, dataclasses.replace(cfg, pooling=mode), seed, heldout,
                                 languages=init.meta.get("languages"))
        rows.append((mode, _final_accuracy(metrics)))
        if progress:
            progress(rows[-1])
    if out_csv is not None:
        write_rows(Path(out_csv), ["pooling", "accuracy"], rows)
    return rows
