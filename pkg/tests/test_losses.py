import math

import numpy as np
import pytest

from w2vlid import numerics as nx
from w2vlid.losses import (ContrastiveConfig, LossWeights, contrastive_from_candidates, contrastive_loss,
                           contrastive_targets, cross_entropy, diversity_loss, pretrain_loss, sample_distractors)
from w2vlid.numerics import Tensor


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- closed forms -------------------------------------------------------------

@pytest.mark.parametrize("k", [1, 20, 100])
def test_identical_candidates_give_log_k_plus_one(k):
    rng = np.random.default_rng(k)
    c = rng.normal(size=(6, 10))
    cand = np.repeat(c[:, None, :], k + 1, axis=1)
    loss = contrastive_from_candidates(t64(c), t64(cand)).item()
    assert abs(loss - math.log(k + 1)) < 1e-5
    if k == 20:
        assert abs(loss - 3.0445) < 1e-4


@pytest.mark.parametrize("v,expect", [(320, -0.018026), (16, -0.1733), (2, None)])
def test_uniform_diversity(v, expect):
    probs = t64(np.full((5, 2, v), 1.0 / v))
    loss = diversity_loss(probs).item()
    assert abs(loss - (-math.log(v) / v)) < 1e-9
    if expect is not None:
        assert abs(loss - expect) < 1e-4


def test_collapsed_diversity_is_zero():
    probs = np.zeros((4, 2, 8))
    probs[..., 3] = 1.0
    assert diversity_loss(t64(probs)).item() == 0.0


@pytest.mark.parametrize("L", [2, 5, 25])
def test_uniform_cross_entropy(L):
    loss = cross_entropy(t64(np.zeros((7, L))), np.arange(7) % L).item()
    assert abs(loss - math.log(L)) < 1e-6
    if L == 25:
        assert abs(loss - 3.2189) < 1e-4


def test_confident_correct_cross_entropy():
    logits = np.full((3, 4), -50.0)
    logits[np.arange(3), [0, 2, 3]] = 50.0
    assert cross_entropy(t64(logits), [0, 2, 3]).item() < 1e-12


# -- distractors --------------------------------------------------------------

def test_distractor_sampling():
    rng = np.random.default_rng(0)
    d = sample_distractors([1, 4, 6, 9, 12], 6, 3, rng)
    assert 6 not in d and len(set(d.tolist())) == 3
    d = sample_distractors([1, 4], 4, 10, rng)
    assert d.tolist() == [1] * 10
    with pytest.raises(ValueError):
        sample_distractors([3], 3, 2, rng)


def test_targets_stay_in_utterance():
    mask = np.zeros((3, 10), dtype=bool)
    mask[0, [1, 2, 3]] = True
    mask[1, 5] = True  # a lone masked step has no distractors and is skipped
    mask[2, 4:9] = True
    targets, cand = contrastive_targets(mask, ContrastiveConfig(num_distractors=4), np.random.default_rng(1))
    assert len(targets) == 8 and cand.shape == (8, 5)
    assert np.array_equal(cand[:, 0], targets)
    assert np.all(cand // 10 == (targets // 10)[:, None])
    assert np.all(mask.reshape(-1)[cand])
    lone = np.zeros((2, 4), dtype=bool)
    lone[:, 0] = True
    with pytest.raises(ValueError):
        contrastive_targets(lone, ContrastiveConfig(), np.random.default_rng(0))
    _, pooled = contrastive_targets(lone, ContrastiveConfig(2, restrict_to_same_utterance=False),
                                    np.random.default_rng(0))
    assert pooled.shape == (2, 3)


def test_distractor_permutation_invariance():
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(100):
        n, k, d = rng.integers(1, 6), rng.integers(1, 12), rng.integers(2, 9)
        c, cand = rng.normal(size=(n, d)), rng.normal(size=(n, k + 1, d))
        perm = np.concatenate([[0], 1 + rng.permutation(k)])
        a = contrastive_from_candidates(t64(c), t64(cand)).item()
        b = contrastive_from_candidates(t64(c), t64(cand[:, perm])).item()
        failures += not abs(a - b) <= 1e-12 * max(1.0, abs(a))
    assert failures == 0


def test_aligned_prediction_lowers_loss():
    rng = np.random.default_rng(2)
    q = rng.normal(size=(2, 12, 6))
    mask = np.zeros((2, 12), dtype=bool)
    mask[:, 2:9] = True
    cfg = ContrastiveConfig(num_distractors=5)
    good = contrastive_loss(t64(q), t64(q), mask, cfg, np.random.default_rng(0)).item()
    bad = contrastive_loss(t64(rng.normal(size=q.shape)), t64(q), mask, cfg, np.random.default_rng(0)).item()
    assert good < bad
    with pytest.raises(nx.ShapeError):
        contrastive_loss(t64(q[:, :5]), t64(q), mask, cfg, np.random.default_rng(0))


def test_config_and_input_errors():
    with pytest.raises(ValueError):
        ContrastiveConfig(num_distractors=0)
    with pytest.raises(ValueError):
        ContrastiveConfig(temperature=0)
    with pytest.raises(ValueError):
        LossWeights(-1)
    with pytest.raises(ValueError, match="normalized"):
        diversity_loss(t64(np.full((2, 1, 4), 0.3)))
    with pytest.raises(ValueError):
        diversity_loss(t64(np.full((2, 1, 4), 0.25)), valid=np.zeros(2, dtype=bool))
    with pytest.raises(ValueError):
        cross_entropy(t64(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        cross_entropy(t64(np.zeros((2, 3))), [0])


def test_weighted_total():
    lm, ld = t64(2.0), t64(-0.5)
    assert pretrain_loss(lm, ld, LossWeights(0.1)).total.item() == pytest.approx(1.95)
    assert pretrain_loss(lm, ld, LossWeights(0.0)).total.item() == 2.0


# -- gradients ----------------------------------------------------------------

def test_contrastive_gradcheck():
    rng = np.random.default_rng(3)
    c, q = t64(rng.normal(size=(2, 8, 5)), True), t64(rng.normal(size=(2, 8, 5)), True)
    mask = np.zeros((2, 8), dtype=bool)
    mask[:, 1:6] = True

    def fn():
        return contrastive_loss(c, q, mask, ContrastiveConfig(3, temperature=0.5), np.random.default_rng(4))

    assert nx.gradcheck(fn, [c, q]) < 1e-6


def test_diversity_gradcheck():
    logits = t64(np.random.default_rng(5).normal(size=(6, 2, 5)), True)
    valid = np.array([1, 1, 0, 1, 1, 0], dtype=bool)
    assert nx.gradcheck(lambda: diversity_loss(nx.softmax(logits, -1), valid), [logits]) < 1e-6


def test_cross_entropy_gradcheck():
    logits = t64(np.random.default_rng(6).normal(size=(4, 5)) * 3, True)
    assert nx.gradcheck(lambda: cross_entropy(logits, [0, 4, 2, 2]), [logits]) < 1e-6
