"""YAML run configuration shared by the command-line tools.

Every key has a default; unknown keys anywhere in the file are rejected. The
file layout mirrors the dataclasses it feeds::

    seed: 0
    threads: null            # BLAS threads; the THREADS env var overrides
    paths:
      manifest: null         # unlabeled pre-training manifest (TSV)
      labeled_manifest: null # labeled manifest for fine-tuning; defaults to ``manifest``
      heldout_manifest: null # evaluation split; carved from the labeled data when null
    data:
      heldout_per_language: 40
      split_seed: 0
    features: {...}          # FeatureConfig fields
    model:
      preset: toy            # "toy" or "full"; other keys override ModelConfig fields
    pretrain: {...}          # PretrainConfig fields
    finetune: {...}          # FinetuneConfig fields

``RunConfig.effective()`` returns the merged dictionary, which the tools write
to ``effective_config.yaml`` in each output directory.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .features import FeatureConfig
from .model import ModelConfig
from .numerics import ConfigurationError
from .training import FinetuneConfig, PretrainConfig


@dataclass
class Paths:
    manifest: str | None = None
    labeled_manifest: str | None = None
    heldout_manifest: str | None = None


@dataclass
class DataConfig:
    heldout_per_language: int = 40
    split_seed: int = 0


@dataclass
class RunConfig:
    seed: int = 0
    threads: int | None = None
    paths: Paths = field(default_factory=Paths)
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model_preset: str = "toy"
    model: ModelConfig = field(default_factory=ModelConfig.toy)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    source: str | None = None

    def effective(self) -> dict:
        model = {"preset": self.model_preset}
        model.update(self.model.to_dict())
        return {
            "seed": self.seed,
            "threads": self.threads,
            "paths": dataclasses.asdict(self.paths),
            "data": dataclasses.asdict(self.data),
            "features": dataclasses.asdict(self.features),
            "model": model,
            "pretrain": dataclasses.asdict(self.pretrain),
            "finetune": dataclasses.asdict(self.finetune),
        }

    def dump(self, out_dir) -> Path:
        path = Path(out_dir) / "effective_config.yaml"
        path.write_text(yaml.safe_dump(self.effective(), sort_keys=False))
        return path

    def require(self, key: str) -> str:
        """Path under ``paths``, resolved against the config file's directory."""
        value = getattr(self.paths, key)
        if value is None and key == "labeled_manifest":
            value = self.paths.manifest
        if value is None:
            raise ConfigurationError(f"paths.{key} is required for this command")
        p = Path(value)
        if not p.is_absolute() and self.source is not None:
            p = Path(self.source).parent / p
        return str(p)


def _build(cls, section: str, values, base: dict | None = None):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigurationError(f"{section}: expected a mapping, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys in {section}: {', '.join(f'{section}.{k}' for k in unknown)}")
    merged = dict(base or {})
    merged.update(values)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{section}: {exc}") from exc


def parse_config(raw: dict | None, source: str | None = None) -> RunConfig:
    raw = dict(raw or {})
    top = {"seed", "threads", "paths", "data", "features", "model", "pretrain", "finetune"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {', '.join(unknown)}")
    model_raw = dict(raw.get("model") or {})
    preset = model_raw.pop("preset", "toy")
    if preset == "toy":
        model_base = ModelConfig.toy().to_dict()
    elif preset == "full":
        model_base = ModelConfig().to_dict()
    else:
        raise ConfigurationError(f"model.preset must be 'toy' or 'full', got {preset!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigurationError(f"seed must be an integer, got {seed!r}")
    threads = raw.get("threads")
    if threads is not None and (not isinstance(threads, int) or threads < 1):
        raise ConfigurationError(f"threads must be a positive integer, got {threads!r}")
    return RunConfig(
        seed=seed,
        threads=threads,
        paths=_build(Paths, "paths", raw.get("paths")),
        data=_build(DataConfig, "data", raw.get("data")),
        features=_build(FeatureConfig, "features", raw.get("features")),
        model_preset=preset,
        model=_build(ModelConfig, "model", model_raw, model_base),
        pretrain=_build(PretrainConfig, "pretrain", raw.get("pretrain")),
        finetune=_build(FinetuneConfig, "finetune", raw.get("finetune")),
        source=source,
    )


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return parse_config(raw, str(path))
