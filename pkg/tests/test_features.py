import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2vlid.features import (AudioBuffer, AudioError, FeatureConfig, FeatureStats, LogMelFrames,
                             compute_feature_stats, denormalize, extract_logmel, load_features,
                             mel_band_edges, normalize, num_frames, read_wav, save_features, write_wav)

SR = 16000


def window_positions(n, window=400, hop=160):
    count, start = 0, 0
    while start + window <= n:
        count += 1
        start += hop
    return count


def test_one_second_gives_98_frames():
    assert window_positions(SR) == 98
    frames = extract_logmel(AudioBuffer(np.zeros(SR), SR))
    assert frames.values.shape == (98, 80)


@pytest.mark.parametrize("n", [400, 401, 559, 560, 12345])
def test_frame_count_closed_form(n):
    assert num_frames(n) == window_positions(n)
    assert extract_logmel(AudioBuffer(np.zeros(n), SR)).num_frames == window_positions(n)


def test_silence_is_uniform_floor():
    v = extract_logmel(AudioBuffer(np.zeros(SR // 2), SR)).values
    np.testing.assert_array_equal(v, np.float32(np.log(1e-10)))


def test_sine_peaks_in_bracketing_bin():
    t = np.arange(SR) / SR
    v = extract_logmel(AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t), SR)).values
    centers = mel_band_edges()[1:-1]
    below = np.searchsorted(centers, 1000.0) - 1  # centers[below] <= 1000 < centers[below + 1]
    assert centers[below] <= 1000 < centers[below + 1]
    assert set(np.argmax(v, axis=1)) <= {below, below + 1}


def test_errors():
    with pytest.raises(AudioError, match="25"):
        extract_logmel(AudioBuffer(np.zeros(399), SR))
    with pytest.raises(AudioError, match="8000"):
        extract_logmel(AudioBuffer(np.zeros(8000), 8000))
    with pytest.raises(AudioError):
        AudioBuffer(np.array([np.nan]), SR)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-6, 10.0))
def test_never_emits_nonfinite(seed, scale):
    x = np.random.default_rng(seed).uniform(-1, 1, 800) * min(scale, 1.0)
    assert np.all(np.isfinite(extract_logmel(AudioBuffer(x, SR)).values))


def test_extract_is_deterministic():
    x = np.random.default_rng(0).uniform(-1, 1, SR)
    a = extract_logmel(AudioBuffer(x, SR)).values
    b = extract_logmel(AudioBuffer(x.copy(), SR)).values
    assert a.tobytes() == b.tobytes()


def test_stats_constant_frame():
    frames = [LogMelFrames(np.tile([[1.0, 2.0, 3.0]], (5, 1)))]
    stats = compute_feature_stats(frames)
    np.testing.assert_allclose(stats.mean, [1, 2, 3])
    np.testing.assert_array_equal(stats.std, [1e-5] * 3)


def test_stats_population_convention():
    stats = compute_feature_stats([LogMelFrames(np.array([[0.0]])), LogMelFrames(np.array([[2.0]]))])
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0 and stats.num_frames_used == 2


def test_stats_empty():
    with pytest.raises(ValueError):
        compute_feature_stats([])


def test_normalize_then_recompute():
    rng = np.random.default_rng(1)
    corpus = [LogMelFrames(rng.normal(5, 3, (50, 80)) * rng.uniform(0.5, 2, 80)) for _ in range(10)]
    stats = compute_feature_stats(corpus)
    again = compute_feature_stats([normalize(f, stats) for f in corpus])
    assert np.all(np.abs(again.mean) < 1e-5)
    assert np.all(np.abs(again.std - 1) < 1e-4)


def test_normalize_cases():
    mean, std = np.array([1.0, -2.0]), np.array([2.0, 0.5])
    stats = FeatureStats(mean, std, 1)
    assert not normalize(LogMelFrames(np.tile(mean, (3, 1))), stats).values.any()
    x = np.random.default_rng(2).standard_normal((4, 2)).astype(np.float32)
    ident = FeatureStats(np.zeros(2), np.ones(2), 1)
    np.testing.assert_array_equal(normalize(LogMelFrames(x), ident).values, x)
    back = denormalize(normalize(LogMelFrames(x), stats), stats).values
    np.testing.assert_allclose(back, x, atol=1e-5)
    with pytest.raises(ValueError):
        normalize(LogMelFrames(np.zeros((2, 3))), stats)


def test_wav_and_feature_cache_roundtrip(tmp_path):
    x = np.random.default_rng(3).uniform(-0.5, 0.5, 1000)
    write_wav(tmp_path / "a.wav", AudioBuffer(x, SR))
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    assert np.max(np.abs(back.samples - x)) < 1 / 16000
    frames = extract_logmel(back)
    save_features(tmp_path / "a.feat", frames)
    raw = (tmp_path / "a.feat").read_bytes()
    assert np.frombuffer(raw[:8], "<i4").tolist() == list(frames.values.shape)
    np.testing.assert_array_equal(load_features(tmp_path / "a.feat").values, frames.values)
    (tmp_path / "bad.feat").write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        load_features(tmp_path / "bad.feat")
