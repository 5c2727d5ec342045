"""Multilingual manifests, smoothed language sampling, batching and the synthetic corpus."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import (AudioBuffer, FeatureConfig, FeatureStats, LogMelFrames, extract_logmel, hz_to_mel,
                       mel_to_hz, normalize, read_wav, write_wav)

log = logging.getLogger(__name__)

# Language codes used for synthetic languages, in the order they are allocated.
LANGUAGE_CODES = ("en", "es", "ar", "id", "vi", "pt", "th", "hi", "it", "fr", "tr", "tl", "ur",
                  "de", "zh", "ml", "bn", "ru", "my", "ms", "ta", "mr", "kn", "si", "ja")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    language: str
    duration: float


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    @property
    def languages(self) -> list[str]:
        return sorted({e.language for e in self.entries})

    def language_id(self, code: str) -> int:
        return self.languages.index(code)

    def by_language(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {code: [] for code in self.languages}
        for i, e in enumerate(self.entries):
            out[e.language].append(i)
        return out

    def hours(self) -> list[float]:
        totals = {code: 0.0 for code in self.languages}
        for e in self.entries:
            totals[e.language] += e.duration
        return [totals[c] / 3600.0 for c in self.languages]

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def subset(self, indices: Sequence[int]) -> "Manifest":
        return Manifest([self.entries[i] for i in indices], self.root)

    def validate(self, check_paths: bool = True) -> None:
        if not self.entries:
            raise ManifestError("manifest is empty")
        for e in self.entries:
            if not e.duration > 0:
                raise ManifestError(f"{e.path}: duration must be positive, got {e.duration}")
            if check_paths and not self.resolve(e).exists():
                raise ManifestError(f"{e.path}: file not found under {self.root}")

    def __len__(self):
        return len(self.entries)


def load_manifest(path) -> Manifest:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            duration = float(parts[2])
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad duration {parts[2]!r}") from exc
        entries.append(ManifestEntry(parts[0], parts[1], duration))
    return Manifest(entries, path.parent)


def write_manifest(path, manifest: Manifest) -> None:
    lines = [f"{e.path}\t{e.language}\t{e.duration:.6f}" for e in manifest.entries]
    Path(path).write_text("".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# language sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingDistribution:
    probs: np.ndarray
    alpha: float

    def draw(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.probs), p=self.probs))


def build_sampling_distribution(hours: Sequence[float], alpha: float) -> SamplingDistribution:
    """Multinomial over languages with ``p_l`` proportional to ``(n_l / N) ** alpha``."""
    hours = np.asarray(hours, dtype=np.float64)
    if hours.size == 0 or np.any(~(hours > 0)):
        raise ValueError(f"all per-language hours must be positive, got {hours.tolist()}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    smoothed = (hours / hours.sum()) ** alpha
    return SamplingDistribution(smoothed / smoothed.sum(), float(alpha))


# ---------------------------------------------------------------------------
# corpus features and batching
# ---------------------------------------------------------------------------

@dataclass
class Corpus:
    """A manifest with its normalized log-mel features held in memory."""

    manifest: Manifest
    features: list[np.ndarray]
    languages: list[str]

    def __post_init__(self):
        self.language_ids = np.array([self.languages.index(e.language) for e in self.manifest.entries], dtype=np.int64)
        self.buckets = [np.flatnonzero(self.language_ids == l) for l in range(len(self.languages))]

    def normalized(self, stats: FeatureStats, languages: Sequence[str] | None = None) -> "Corpus":
        feats = [normalize_array(v, stats) for v in self.features]
        return Corpus(self.manifest, feats, list(languages) if languages is not None else self.languages)

    def validate_buckets(self, probs: np.ndarray | None = None) -> None:
        for l, bucket in enumerate(self.buckets):
            if len(bucket) == 0 and (probs is None or probs[l] > 0):
                raise ManifestError(f"language {self.languages[l]!r} has no utterances")


def extract_manifest_features(manifest: Manifest, cfg: FeatureConfig = FeatureConfig()) -> list[np.ndarray]:
    return [extract_logmel(read_wav(manifest.resolve(e)), cfg).values for e in manifest.entries]


def load_corpus(manifest: Manifest, stats: FeatureStats | None, cfg: FeatureConfig = FeatureConfig(),
                languages: Sequence[str] | None = None, raw: list[np.ndarray] | None = None) -> Corpus:
    manifest.validate()
    raw = raw if raw is not None else extract_manifest_features(manifest, cfg)
    feats = [normalize_array(v, stats) for v in raw] if stats is not None else raw
    langs = list(languages) if languages is not None else manifest.languages
    unknown = set(manifest.languages) - set(langs)
    if unknown:
        raise ManifestError(f"languages {sorted(unknown)} are not in the known set {langs}")
    return Corpus(manifest, feats, langs)


def normalize_array(values: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return normalize(LogMelFrames(values), stats).values


@dataclass
class Batch:
    features: np.ndarray  # (B, T_crop, F)
    lengths: np.ndarray  # valid frames per slot
    language_ids: np.ndarray
    utterance_ids: list[str]

    @property
    def padding_mask(self) -> np.ndarray:
        """True on padded frames."""
        return np.arange(self.features.shape[1])[None, :] >= self.lengths[:, None]


def crop(values: np.ndarray, crop_frames: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    n = values.shape[0]
    if n >= crop_frames:
        start = int(rng.integers(0, n - crop_frames + 1))
        return values[start:start + crop_frames], crop_frames
    out = np.zeros((crop_frames,) + values.shape[1:], dtype=values.dtype)
    out[:n] = values
    return out, n


def collate(corpus: Corpus, indices: Sequence[int], crop_frames: int, rng: np.random.Generator) -> Batch:
    """Crop each utterance to at most ``crop_frames``; the batch is as long as its longest crop."""
    crop_frames = min(crop_frames, max(corpus.features[i].shape[0] for i in indices))
    feats, lengths = [], []
    for i in indices:
        window, n = crop(corpus.features[i], crop_frames, rng)
        feats.append(window)
        lengths.append(n)
    return Batch(np.stack(feats).astype(np.float32), np.array(lengths, dtype=np.int64),
                 corpus.language_ids[np.asarray(indices)],
                 [corpus.manifest.entries[i].path for i in indices])


def sample_batch(corpus: Corpus, dist: SamplingDistribution, batch_size: int, crop_frames: int,
                 rng: np.random.Generator) -> Batch:
    """Fill each slot with a language drawn from ``dist`` and a random utterance of it."""
    if crop_frames < 1:
        raise ValueError("crop_frames must be >= 1")
    if len(dist.probs) != len(corpus.languages):
        raise ValueError(f"distribution over {len(dist.probs)} languages, corpus has {len(corpus.languages)}")
    indices = []
    for _ in range(batch_size):
        lang = dist.draw(rng)
        bucket = corpus.buckets[lang]
        indices.append(int(bucket[rng.integers(len(bucket))]))
    return collate(corpus, indices, crop_frames, rng)


def subsample_per_language(manifest: Manifest, seconds_per_language: float,
                           rng: np.random.Generator) -> tuple[Manifest, list[str]]:
    """Random utterances per language until the duration budget is met.

    Returns the subset and a list of warnings for languages with too little data.
    """
    chosen, warnings = [], []
    for code, idx in manifest.by_language().items():
        order = rng.permutation(idx)
        total = 0.0
        for i in order:
            if total >= seconds_per_language:
                break
            chosen.append(int(i))
            total += manifest.entries[i].duration
        if total < seconds_per_language:
            warnings.append(f"{code}: only {total:.1f}s available, requested {seconds_per_language:.1f}s; using all")
    return manifest.subset(sorted(chosen)), warnings


# ---------------------------------------------------------------------------
# synthetic multilingual corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_languages: int = 5
    utterances_per_language: int = 50
    duration_seconds: float = 8.0
    seed: int = 0
    sample_rate: int = 16000
    tones_per_language: int = 4
    f_low: float = 300.0
    f_high: float = 3500.0
    noise_level: float = 0.05
    max_tilt_db_per_octave: float = 3.0
    follow_prob: float = 0.8  # chance a syllable takes its language's successor tone

    def validate(self) -> None:
        if self.num_languages < 1:
            raise ValueError("num_languages must be >= 1")
        if self.utterances_per_language < 0:
            raise ValueError("utterances_per_language must be >= 0")
        if self.duration_seconds <= 0.025:
            raise ValueError("duration_seconds must exceed one analysis window")
        if not 0 < self.f_low < self.f_high < self.sample_rate / 2:
            raise ValueError("tone band must satisfy 0 < f_low < f_high < Nyquist")
        if self.tones_per_language < 1:
            raise ValueError("tones_per_language must be >= 1")
        if not 0 <= self.follow_prob <= 1:
            raise ValueError("follow_prob must lie in [0, 1]")


def language_codes(n: int) -> list[str]:
    return [LANGUAGE_CODES[i] if i < len(LANGUAGE_CODES) else f"x{i:03d}" for i in range(n)]


def tone_inventories(spec: SyntheticCorpusSpec) -> list[np.ndarray]:
    """Disjoint tone sets, one per language, dealt from a mel-spaced grid."""
    n = spec.num_languages * spec.tones_per_language
    grid = mel_to_hz(np.linspace(hz_to_mel(spec.f_low), hz_to_mel(spec.f_high), n))
    order = np.random.default_rng([spec.seed, 7919]).permutation(n)
    return [np.sort(grid[order[l::spec.num_languages]]) for l in range(spec.num_languages)]


def language_tilts(spec: SyntheticCorpusSpec) -> np.ndarray:
    if spec.num_languages == 1:
        return np.zeros(1)
    tilts = np.linspace(-spec.max_tilt_db_per_octave, spec.max_tilt_db_per_octave, spec.num_languages)
    return np.random.default_rng([spec.seed, 104729]).permutation(tilts)


def _tilted_noise(n: int, tilt_db_per_octave: float, sr: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / sr)
    octaves = np.log2(np.maximum(freqs, 50.0) / 1000.0)
    spec *= 10 ** (tilt_db_per_octave * octaves / 20)
    out = np.fft.irfft(spec, n)
    return out / (np.std(out) + 1e-12)


def tone_chains(spec: SyntheticCorpusSpec) -> list[np.ndarray]:
    """Each language's tones in successor order: tone ``i`` tends to be followed by ``i + 1`` (cyclic)."""
    return [inv[np.random.default_rng([spec.seed, 31337, l]).permutation(len(inv))]
            for l, inv in enumerate(tone_inventories(spec))]


def synthesize_utterance(tones: np.ndarray, tilt: float, spec: SyntheticCorpusSpec,
                         rng: np.random.Generator) -> np.ndarray:
    """Syllable-like tone bursts from the language's inventory over tilted noise.

    Syllables follow a Markov chain over ``tones``: with ``follow_prob`` the
    next tone is the successor of the previous one in array order, otherwise
    it is uniform. The chain is doubly stochastic, so every tone is equally
    frequent in the long run.
    """
    sr = spec.sample_rate
    n = int(round(spec.duration_seconds * sr))
    out = np.zeros(n)
    pos = 0
    current = int(rng.integers(len(tones)))
    while pos < n:
        dur = int(rng.uniform(0.06, 0.22) * sr)
        seg = min(dur, n - pos)
        if rng.random() > 0.15:
            t = np.arange(seg) / sr
            env = np.sin(np.pi * np.arange(seg) / max(seg, 1)) ** 0.5
            freq = tones[current] * rng.uniform(0.99, 1.01)
            burst = np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
            if rng.random() < 0.4:
                burst += 0.5 * np.sin(2 * np.pi * 2 * freq * t)
            out[pos:pos + seg] = rng.uniform(0.3, 1.0) * env * burst
            if rng.random() < spec.follow_prob:
                current = (current + 1) % len(tones)
            else:
                current = int(rng.integers(len(tones)))
        pos += dur
    speaker_tilt = rng.normal(0.0, 1.0)
    out += spec.noise_level * _tilted_noise(n, tilt + speaker_tilt, sr, rng)
    return 0.5 * out / (np.max(np.abs(out)) + 1e-12) * rng.uniform(0.5, 1.0)


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, out_dir) -> Manifest:
    """Write WAVs plus ``manifest.tsv`` under ``out_dir``; deterministic in ``spec.seed``."""
    spec.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc
    codes = language_codes(spec.num_languages)
    inventories = tone_chains(spec)
    tilts = language_tilts(spec)
    entries = []
    for l, code in enumerate(codes):
        (out_dir / "wav" / code).mkdir(parents=True, exist_ok=True)
        for u in range(spec.utterances_per_language):
            rng = np.random.default_rng([spec.seed, l, u])
            samples = synthesize_utterance(inventories[l], tilts[l], spec, rng)
            rel = f"wav/{code}/{code}_{u:04d}.wav"
            write_wav(out_dir / rel, AudioBuffer(samples, spec.sample_rate))
            entries.append(ManifestEntry(rel, code, len(samples) / spec.sample_rate))
    manifest = Manifest(entries, out_dir)
    write_manifest(out_dir / "manifest.tsv", manifest)
    return manifest


def split_by_language(manifest: Manifest, counts: Sequence[int], seed: int) -> list[Manifest]:
    """Partition each language's utterances into consecutive shares of the given sizes.

    A final share may be -1 to take the remainder.
    """
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in counts]
    for code, idx in manifest.by_language().items():
        order = list(rng.permutation(idx))
        start = 0
        for k, c in enumerate(counts):
            stop = len(order) if c < 0 else start + c
            if stop > len(order):
                raise ManifestError(f"{code}: requested {stop} utterances, only {len(order)} available")
            parts[k].extend(int(i) for i in order[start:stop])
            start = stop
    return [manifest.subset(sorted(p)) for p in parts]
