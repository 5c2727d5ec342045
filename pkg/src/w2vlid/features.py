"""Log-mel spectrogram front end and per-dimension normalization."""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    n_fft: int = 512
    floor_eps: float = 1e-10
    std_floor: float = 1e-5

    @property
    def window(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000))

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000))


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class LogMelFrames:
    values: np.ndarray  # (T, F) float32
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    num_frames_used: int = 0

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "num_frames_used": self.num_frames_used}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   int(d["num_frames_used"]))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """``n_mels + 2`` frequencies: lower edge, centers, upper edge."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular filters as a (n_fft // 2 + 1, n_mels) matrix."""
    pts = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling)).T


def num_frames(num_samples: int, cfg: FeatureConfig = FeatureConfig()) -> int:
    if num_samples < cfg.window:
        return 0
    return (num_samples - cfg.window) // cfg.hop + 1


def extract_logmel(audio: AudioBuffer, cfg: FeatureConfig = FeatureConfig()) -> LogMelFrames:
    if audio.sample_rate != cfg.sample_rate:
        raise AudioError(f"expected {cfg.sample_rate} Hz audio, got {audio.sample_rate} Hz (no resampling)")
    n = len(audio.samples)
    if n < cfg.window:
        raise AudioError(f"audio too short: need at least {cfg.frame_length_ms} ms "
                         f"({cfg.window} samples), got {n}")
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, cfg.window)[::cfg.hop]
    frames = frames * np.hanning(cfg.window + 1)[:-1]  # periodic Hann
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=-1)) ** 2
    mel = power @ mel_filterbank(cfg)
    values = np.log(np.maximum(mel, cfg.floor_eps)).astype(np.float32)
    return LogMelFrames(values, cfg.frame_shift_ms, cfg.frame_length_ms)


def compute_feature_stats(corpus_sample: Sequence[LogMelFrames], std_floor: float = 1e-5) -> FeatureStats:
    """Population mean / std per dimension, accumulated in float64."""
    total = 0
    s1 = s2 = None
    for frames in corpus_sample:
        v = np.asarray(frames.values if isinstance(frames, LogMelFrames) else frames, dtype=np.float64)
        if v.size == 0:
            continue
        if s1 is None:
            s1, s2 = np.zeros(v.shape[1]), np.zeros(v.shape[1])
        total += v.shape[0]
        s1 += v.sum(axis=0)
        s2 += (v * v).sum(axis=0)
    if total == 0:
        raise ValueError("cannot compute feature statistics from an empty corpus sample")
    mean = s1 / total
    var = np.maximum(s2 / total - mean * mean, 0.0)
    return FeatureStats(mean, np.maximum(np.sqrt(var), std_floor), total)


def normalize(frames: LogMelFrames, stats: FeatureStats) -> LogMelFrames:
    v = frames.values
    if v.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"feature dimension {v.shape[-1]} does not match stats dimension {stats.mean.shape[0]}")
    out = ((v - stats.mean) / stats.std).astype(np.float32)
    return LogMelFrames(out, frames.frame_shift_ms, frames.frame_length_ms)


def denormalize(frames: LogMelFrames, stats: FeatureStats) -> LogMelFrames:
    out = (frames.values.astype(np.float64) * stats.std + stats.mean).astype(np.float32)
    return LogMelFrames(out, frames.frame_shift_ms, frames.frame_length_ms)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_wav(path) -> AudioBuffer:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise AudioError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, audio: AudioBuffer) -> None:
    pcm = np.clip(np.round(audio.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())


def save_features(path, frames: LogMelFrames) -> None:
    """Flat cache record: ``<i4 T, <i4 F`` header then row-major ``<f4`` payload."""
    v = np.ascontiguousarray(frames.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", *v.shape))
        fh.write(v.tobytes())


def load_features(path) -> LogMelFrames:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated feature header")
    T, F = struct.unpack("<ii", raw[:8])
    if len(raw) != 8 + 4 * T * F:
        raise ValueError(f"{path}: payload size does not match header {T}x{F}")
    return LogMelFrames(np.frombuffer(raw[8:], dtype="<f4").reshape(T, F).astype(np.float32))
