import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2vlid.data import (Corpus, Manifest, ManifestEntry, ManifestError, SamplingDistribution,
                         SyntheticCorpusSpec, build_sampling_distribution, extract_manifest_features,
                         generate_synthetic_corpus, load_manifest, sample_batch, split_by_language,
                         subsample_per_language, tone_inventories, write_manifest)


def toy_corpus(lengths_by_lang):
    entries, feats = [], []
    for code, lengths in lengths_by_lang.items():
        for i, n in enumerate(lengths):
            entries.append(ManifestEntry(f"{code}/{i}.wav", code, n / 100))
            feats.append(np.full((n, 3), float(len(feats) + 1), dtype=np.float32))
    m = Manifest(entries)
    return Corpus(m, feats, m.languages)


# -- sampling distribution ---------------------------------------------------

def test_distribution_examples():
    np.testing.assert_allclose(build_sampling_distribution([100, 100], 0.5).probs, [0.5, 0.5])
    np.testing.assert_allclose(build_sampling_distribution([400, 100], 1.0).probs, [0.8, 0.2])
    a, b = 0.8 ** 0.5, 0.2 ** 0.5
    assert abs(a / (a + b) - 2 / 3) < 1e-12
    np.testing.assert_allclose(build_sampling_distribution([400, 100], 0.5).probs, [2 / 3, 1 / 3], rtol=1e-12)


@pytest.mark.parametrize("hours,alpha", [([1, 0], 0.5), ([1, -2], 0.5), ([1, 2], 0.0), ([1, 2], 1.5), ([], 0.5)])
def test_distribution_errors(hours, alpha):
    with pytest.raises(ValueError):
        build_sampling_distribution(hours, alpha)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=2, max_size=10), st.floats(0.01, 1.0), st.randoms())
def test_distribution_properties(hours, alpha, rnd):
    p = build_sampling_distribution(hours, alpha).probs
    assert abs(p.sum() - 1) < 1e-9 and np.all(p > 0)
    perm = list(range(len(hours)))
    rnd.shuffle(perm)
    q = build_sampling_distribution([hours[i] for i in perm], alpha).probs
    np.testing.assert_allclose(q, p[perm], rtol=1e-9)


def test_flattening_is_monotone_in_alpha():
    hours = [500, 120, 30, 3]
    ratios = [np.ptp(np.log(build_sampling_distribution(hours, a).probs)) for a in (1.0, 0.7, 0.5, 0.3, 0.1, 0.01)]
    assert all(x > y for x, y in zip(ratios, ratios[1:]))
    assert np.exp(ratios[-1]) < 1.1
    np.testing.assert_allclose(build_sampling_distribution(hours, 1.0).probs, np.array(hours) / sum(hours))


# -- batching ----------------------------------------------------------------

def test_single_language_batch():
    corpus = toy_corpus({"en": [30, 40]})
    b = sample_batch(corpus, SamplingDistribution(np.array([1.0]), 1.0), 6, 10, np.random.default_rng(0))
    assert set(b.language_ids) == {0}
    assert b.features.shape == (6, 10, 3)


def test_zero_probability_language_never_drawn():
    corpus = toy_corpus({"de": [20], "en": [20]})
    b = sample_batch(corpus, SamplingDistribution(np.array([1.0, 0.0]), 1.0), 200, 5, np.random.default_rng(0))
    assert not np.any(b.language_ids == 1)


def test_empirical_frequencies_match():
    corpus = toy_corpus({"de": [20], "en": [20]})
    rng = np.random.default_rng(1234)
    for alpha, target in ((0.5, [2 / 3, 1 / 3]), (1.0, [0.8, 0.2])):
        dist = build_sampling_distribution([400, 100], alpha)
        ids = np.concatenate([sample_batch(corpus, dist, 1000, 4, rng).language_ids for _ in range(30)])
        freq = np.bincount(ids, minlength=2) / ids.size
        assert np.all(np.abs(freq - target) < 0.01)


def test_crops_in_bounds_and_padding_flagged():
    corpus = toy_corpus({"en": [5, 50]})
    rng = np.random.default_rng(2)
    for _ in range(50):
        b = sample_batch(corpus, SamplingDistribution(np.array([1.0]), 1.0), 4, 12, rng)
        T = b.features.shape[1]
        assert T == max(b.lengths) and T <= 12
        for slot in range(4):
            n = b.lengths[slot]
            assert not b.features[slot, n:].any()
            assert np.all(b.padding_mask[slot] == (np.arange(T) >= n))
            assert np.all(b.features[slot, :n] != 0)
        assert set(b.lengths) <= {5, 12}


def test_bad_crop():
    corpus = toy_corpus({"en": [5]})
    with pytest.raises(ValueError):
        sample_batch(corpus, SamplingDistribution(np.array([1.0]), 1.0), 1, 0, np.random.default_rng(0))


def test_empty_bucket_is_a_validation_error():
    m = Manifest([ManifestEntry("a.wav", "en", 1.0)])
    corpus = Corpus(m, [np.zeros((3, 2))], ["de", "en"])
    with pytest.raises(ManifestError, match="de"):
        corpus.validate_buckets()


# -- manifests ---------------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    m = Manifest([ManifestEntry("b.wav", "fr", 2.5), ManifestEntry("a.wav", "en", 1.25)], tmp_path)
    write_manifest(tmp_path / "m.tsv", m)
    assert (tmp_path / "m.tsv").read_text().splitlines()[0] == "b.wav\tfr\t2.500000"
    back = load_manifest(tmp_path / "m.tsv")
    assert back.entries == m.entries
    assert back.languages == ["en", "fr"]
    with pytest.raises(ManifestError, match="not found"):
        back.validate()
    (tmp_path / "bad.tsv").write_text("x.wav\ten\n")
    with pytest.raises(ManifestError, match="3 tab"):
        load_manifest(tmp_path / "bad.tsv")


def test_subsample_and_split():
    m = Manifest([ManifestEntry(f"{c}{i}", c, 8.0) for c in ("en", "de") for i in range(10)])
    sub, warn = subsample_per_language(m, 20.0, np.random.default_rng(0))
    assert len(sub) == 6 and not warn
    again, _ = subsample_per_language(m, 20.0, np.random.default_rng(0))
    assert again.entries == sub.entries
    _, warn = subsample_per_language(m, 1000.0, np.random.default_rng(0))
    assert len(warn) == 2
    a, b = split_by_language(m, [3, -1], seed=1)
    assert len(a) == 6 and len(b) == 14
    assert not {e.path for e in a.entries} & {e.path for e in b.entries}


# -- synthetic corpus --------------------------------------------------------

def test_tone_sets_disjoint():
    spec = SyntheticCorpusSpec(num_languages=25, tones_per_language=4)
    sets = tone_inventories(spec)
    flat = np.concatenate(sets)
    assert len(np.unique(flat)) == flat.size
    assert flat.max() < spec.sample_rate / 2


@pytest.mark.parametrize("seed", range(5))
def test_two_languages_are_separable(tmp_path, seed):
    spec = SyntheticCorpusSpec(num_languages=2, utterances_per_language=20, duration_seconds=2.0, seed=seed)
    m = generate_synthetic_corpus(spec, tmp_path)
    feats = extract_manifest_features(m)
    means = np.array([f.mean(axis=0) for f in feats])
    labels = np.array([e.language for e in m.entries])
    a, b = means[labels == m.languages[0]], means[labels == m.languages[1]]
    within = np.maximum(a.std(axis=0), b.std(axis=0))
    assert np.any(np.abs(a.mean(axis=0) - b.mean(axis=0)) > 5 * within)


def test_synthetic_is_deterministic(tmp_path):
    spec = SyntheticCorpusSpec(num_languages=2, utterances_per_language=2, duration_seconds=0.5, seed=9)
    generate_synthetic_corpus(spec, tmp_path / "a")
    generate_synthetic_corpus(spec, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 5
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_empty_synthetic_manifest(tmp_path):
    m = generate_synthetic_corpus(SyntheticCorpusSpec(num_languages=2, utterances_per_language=0), tmp_path)
    assert len(m) == 0
    with pytest.raises(ManifestError):
        m.validate()
