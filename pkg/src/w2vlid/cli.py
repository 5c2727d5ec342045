"""Command-line entry point: ``w2vlid <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import RunConfig, load_config
from .data import (Corpus, ManifestError, SyntheticCorpusSpec, extract_manifest_features,
                   generate_synthetic_corpus, load_manifest, split_by_language, subsample_per_language)
from .experiments import ablate_pooling, probe_layers
from .lid import POOLING_MODES, evaluate_accuracy, write_rows
from .numerics import ConfigurationError
from .training import (CheckpointError, finetune, lid_model_from_checkpoint, load_checkpoint, pretrain)

log = logging.getLogger("w2vlid")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _thread_limit(cfg_threads: int | None):
    env = os.environ.get("THREADS")
    threads = int(env) if env else cfg_threads
    if not threads:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_raw(manifest_path: str, cfg: RunConfig, languages=None) -> Corpus:
    manifest = load_manifest(manifest_path)
    manifest.validate()
    langs = list(languages) if languages is not None else manifest.languages
    unknown = set(manifest.languages) - set(langs)
    if unknown:
        raise ManifestError(f"{manifest_path}: languages {sorted(unknown)} not in {langs}")
    return Corpus(manifest, extract_manifest_features(manifest, cfg.features), langs)


def _sub(corpus: Corpus, manifest) -> Corpus:
    index = {e.path: i for i, e in enumerate(corpus.manifest.entries)}
    return Corpus(manifest, [corpus.features[index[e.path]] for e in manifest.entries], corpus.languages)


def labeled_splits(cfg: RunConfig, minutes: float | None, seed: int, languages=None):
    """Labeled training subset (``minutes`` per language) and the held-out split."""
    labeled = _load_raw(cfg.require("labeled_manifest"), cfg, languages)
    languages = labeled.languages
    if cfg.paths.heldout_manifest is not None:
        pool, held = labeled, _load_raw(cfg.require("heldout_manifest"), cfg, languages)
    else:
        held_m, pool_m = split_by_language(labeled.manifest, [cfg.data.heldout_per_language, -1],
                                           cfg.data.split_seed)
        pool, held = _sub(labeled, pool_m), _sub(labeled, held_m)
    if minutes is not None:
        chosen, warnings = subsample_per_language(pool.manifest, minutes * 60.0, np.random.default_rng(seed))
        for w in warnings:
            log.warning(w)
        pool = _sub(pool, chosen)
    return pool, held


def _parse_layers(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"--layers must be a comma-separated list of integers, got {text!r}") from exc


def _print_rows(header, rows):
    print(",".join(header))
    for r in rows:
        print(",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    values = {}
    if args.spec:
        raw = yaml.safe_load(Path(args.spec).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{args.spec}: top level must be a mapping")
        known = {f for f in SyntheticCorpusSpec.__dataclass_fields__}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigurationError(f"unknown keys in {args.spec}: {', '.join(unknown)}")
        values.update(raw)
    for key in ("num_languages", "utterances_per_language", "duration_seconds", "seed"):
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    try:
        spec = SyntheticCorpusSpec(**values)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    manifest = generate_synthetic_corpus(spec, args.out)
    (Path(args.out) / "spec.yaml").write_text(yaml.safe_dump(spec.__dict__, sort_keys=False))
    print(f"wrote {len(manifest)} utterances in {len(manifest.languages)} languages to {args.out}")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    if args.dry_run:
        print(yaml.safe_dump(cfg.effective(), sort_keys=False), end="")
        return 0
    manifest_path = cfg.require("manifest")
    out = _out_dir(args.out)
    cfg.dump(out)
    corpus = _load_raw(manifest_path, cfg)

    def progress(rec):
        if rec["step"] % 100 == 0 or rec["step"] == cfg.pretrain.total_updates:
            log.info("step %d  loss %.4f  Lm %.4f  Ld %.4f  lr %.2e", rec["step"], rec["loss_total"],
                     rec["loss_contrastive"], rec["loss_diversity"], rec["lr"])

    pretrain(cfg.model, cfg.pretrain, corpus, seed=cfg.seed, out_dir=out, progress=progress)
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return 0


def _init(args, cfg):
    if args.init == "scratch":
        return None
    return load_checkpoint(args.init)


def cmd_finetune(args, cfg: RunConfig) -> int:
    init = _init(args, cfg)
    languages = init.meta.get("languages") if init is not None else None
    train, held = labeled_splits(cfg, args.labeled_minutes_per_lang, cfg.seed, languages)
    out = _out_dir(args.out)
    cfg.dump(out)
    _, model, metrics = finetune(init, train, cfg.finetune, cfg.seed, held, model_cfg=cfg.model, out_dir=out,
                                 languages=languages)
    acc = metrics[-1]["accuracy"]
    mode = "scratch" if init is None else "pretrained"
    minutes = "all" if args.labeled_minutes_per_lang is None else args.labeled_minutes_per_lang
    write_rows(out / "result.csv", ["init_mode", "minutes", "accuracy"], [(mode, minutes, f"{acc:.6f}")])
    _print_rows(["init_mode", "minutes", "accuracy"], [(mode, minutes, acc)])
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = lid_model_from_checkpoint(ckpt)
    languages = ckpt.meta["languages"]
    manifest_path = args.manifest or cfg.require("heldout_manifest")
    corpus = _load_raw(manifest_path, cfg)
    unknown = set(corpus.languages) - set(languages)
    if unknown:
        raise UsageError(f"{manifest_path}: labels {sorted(unknown)} are outside the trained language set")
    ev = evaluate_accuracy(corpus.normalized(ckpt.feature_stats, languages), model, languages)
    out = _out_dir(args.out)
    ev.write_csv(out / "confusion.csv")
    write_rows(out / "accuracy.csv", ["split", "accuracy"], [(manifest_path, f"{ev.accuracy:.6f}")])
    print(f"accuracy,{ev.accuracy:.4f}")
    return 0


def cmd_probe_layers(args, cfg: RunConfig) -> int:
    init = load_checkpoint(args.init)
    layers = _parse_layers(args.layers) if args.layers else list(range(1, init.model_config.n_layers + 1))
    bad = [k for k in layers if not 1 <= k <= init.model_config.n_layers]
    if bad or not layers:
        raise UsageError(f"--layers {bad or layers} outside 1..{init.model_config.n_layers}")
    train, held = labeled_splits(cfg, args.labeled_minutes_per_lang, cfg.seed, init.meta.get("languages"))
    out = _out_dir(args.out)
    cfg.dump(out)
    rows = probe_layers(init, layers, train, held, cfg.finetune, cfg.seed, out / "layers.csv",
                        progress=lambda r: log.info("layer %d accuracy %.4f", *r))
    _print_rows(["layer", "accuracy"], rows)
    return 0


def cmd_ablate_pooling(args, cfg: RunConfig) -> int:
    init = _init(args, cfg)
    languages = init.meta.get("languages") if init is not None else None
    if init is None:
        raise UsageError("ablate-pooling needs a pre-trained checkpoint for --init")
    train, held = labeled_splits(cfg, args.labeled_minutes_per_lang, cfg.seed, languages)
    out = _out_dir(args.out)
    cfg.dump(out)
    rows = ablate_pooling(init, train, held, cfg.finetune, cfg.seed, POOLING_MODES, out / "pooling.csv",
                          progress=lambda r: log.info("%s accuracy %.4f", *r))
    _print_rows(["pooling", "accuracy"], rows)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="w2vlid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic multilingual corpus")
    g.add_argument("--spec", help="YAML file with corpus fields")
    g.add_argument("--out", required=True)
    g.add_argument("--num-languages", type=_positive_int)
    g.add_argument("--utterances-per-language", type=int)
    g.add_argument("--duration-seconds", type=float)
    g.add_argument("--seed", type=int)

    def with_config(sp):
        sp.add_argument("--config", help="YAML run config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        return sp

    pt = with_config(sub.add_parser("pretrain", help="self-supervised pre-training"))
    pt.add_argument("--out")
    pt.add_argument("--dry-run", action="store_true", help="print the effective config and exit")

    ft = with_config(sub.add_parser("finetune", help="language-ID fine-tuning"))
    ft.add_argument("--init", required=True, help="pre-trained checkpoint path or 'scratch'")
    ft.add_argument("--labeled-minutes-per-lang", type=_nonneg_float)
    ft.add_argument("--total-updates", type=_positive_int, help="override finetune.total_updates")
    ft.add_argument("--out", required=True)

    ev = with_config(sub.add_parser("evaluate", help="accuracy and confusion matrix"))
    ev.add_argument("--checkpoint", required=True, help="fine-tuned checkpoint")
    ev.add_argument("--manifest", help="labeled manifest to score (default: paths.heldout_manifest)")
    ev.add_argument("--out", required=True)

    pl = with_config(sub.add_parser("probe-layers", help="accuracy per transformer block"))
    pl.add_argument("--init", required=True)
    pl.add_argument("--layers", help="comma-separated block indices (default: all)")
    pl.add_argument("--labeled-minutes-per-lang", type=_nonneg_float)
    pl.add_argument("--total-updates", type=_positive_int, help="override finetune.total_updates")
    pl.add_argument("--out", required=True)

    ap = with_config(sub.add_parser("ablate-pooling", help="accuracy per pooling mode"))
    ap.add_argument("--init", required=True)
    ap.add_argument("--labeled-minutes-per-lang", type=_nonneg_float)
    ap.add_argument("--total-updates", type=_positive_int, help="override finetune.total_updates")
    ap.add_argument("--out", required=True)
    return p


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "probe-layers": cmd_probe_layers,
    "ablate-pooling": cmd_ablate_pooling,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if getattr(args, "total_updates", None) is not None:
            cfg.finetune = dataclasses.replace(cfg.finetune, total_updates=args.total_updates)
        if args.command == "pretrain" and not args.dry_run and not args.out:
            raise UsageError("pretrain needs --out unless --dry-run is given")
        with _thread_limit(cfg.threads):
            return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, CheckpointError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
