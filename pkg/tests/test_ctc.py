import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import all_labelings, brute_force_ctc, exhaustive_decode, random_logprobs
from arasr import lm as lmmod
from arasr.ctc import (CtcTarget, DecoderConfig, InfeasibleTargetError, batch_ctc_loss,
                       beam_search_decode, collapse, ctc_grad, ctc_loss, ctc_loss_and_grad,
                       fused_score, greedy_decode, grid_search_fusion, log_softmax)
from arasr.metrics import wer
from arasr.text import Alphabet, encode

A, B, C, SP, BL = 0, 1, 2, 3, 4


def target(labels, blank):
    return CtcTarget(np.asarray(labels, dtype=np.int64), blank)


def one_hot_frames(path, K, on=0.999):
    lp = np.full((len(path), K), math.log((1 - on) / (K - 1)))
    lp[np.arange(len(path)), path] = math.log(on)
    return lp


# --- collapse ----------------------------------------------------------------

def test_collapse_examples(abc):
    assert collapse([A, A, BL, B], abc) == "ab"
    assert collapse([A, BL, A], abc) == "aa"
    assert collapse([BL, BL], abc) == ""


# --- loss --------------------------------------------------------------------

def test_single_frame_loss():
    lp = np.log(np.array([[0.6, 0.3, 0.1]]))
    assert ctc_loss(lp, target([0], 2)) == pytest.approx(-math.log(0.6))


def test_matches_brute_force_t4(rng):
    lp = random_logprobs(rng, 4, 3)
    assert ctc_loss(lp, target([0, 1], 2)) == pytest.approx(brute_force_ctc(lp, [0, 1], 2), abs=1e-10)


def test_repeat_needs_three_frames(rng):
    lp = random_logprobs(rng, 2, 3)
    assert ctc_loss(lp, target([0, 0], 2)) == math.inf
    with pytest.raises(InfeasibleTargetError):
        ctc_loss_and_grad(lp, target([0, 0], 2))
    assert math.isfinite(ctc_loss(random_logprobs(rng, 3, 3), target([0, 0], 2)))


def test_empty_target_is_all_blank(rng):
    lp = random_logprobs(rng, 5, 3)
    assert ctc_loss(lp, target([], 2)) == pytest.approx(-lp[:, 2].sum())


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 5), K=st.integers(2, 4), seed=st.integers(0, 10 ** 6))
def test_total_probability_is_one(T, K, seed):
    lp = random_logprobs(np.random.default_rng(seed), T, K)
    blank = K - 1
    total = 0.0
    for lab in all_labelings(K - 1, T):
        loss = ctc_loss(lp, target(lab, blank))
        if math.isfinite(loss):
            total += math.exp(-loss)
    assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(T=st.integers(2, 7), seed=st.integers(0, 10 ** 6), data=st.data())
def test_permutation_covariance(T, seed, data):
    K = 4
    rng = np.random.default_rng(seed)
    lp = random_logprobs(rng, T, K)
    labels = data.draw(st.lists(st.integers(0, K - 2), max_size=3))
    perm = rng.permutation(K)
    # class k of the original becomes class perm[k]
    lp2 = np.empty_like(lp)
    lp2[:, perm] = lp
    t1 = target(labels, K - 1)
    t2 = target([perm[k] for k in labels], perm[K - 1])
    assert ctc_loss(lp2, t2) == pytest.approx(ctc_loss(lp, t1), rel=1e-12, abs=1e-12)


# --- gradients ---------------------------------------------------------------

def test_logit_gradient_finite_difference(rng):
    T, K = 5, 4
    z = rng.normal(size=(T, K))
    tgt = target([0, 1, 1], 3)
    g = ctc_grad(log_softmax(z), tgt)
    eps = 1e-6
    num = np.zeros_like(z)
    for t, k in itertools.product(range(T), range(K)):
        zp, zm = z.copy(), z.copy()
        zp[t, k] += eps
        zm[t, k] -= eps
        num[t, k] = (ctc_loss(log_softmax(zp), tgt) - ctc_loss(log_softmax(zm), tgt)) / (2 * eps)
    rel = np.abs(num - g) / np.maximum(np.maximum(np.abs(num), np.abs(g)), 1e-8)
    assert rel.max() < 1e-5


def test_logprob_gradient_finite_difference(rng):
    lp = random_logprobs(rng, 5, 4)
    tgt = target([2, 0], 3)
    _, g = ctc_loss_and_grad(lp, tgt)
    eps = 1e-6
    for t, k in itertools.product(range(5), range(4)):
        p, m = lp.copy(), lp.copy()
        p[t, k] += eps
        m[t, k] -= eps
        num = (ctc_loss(p, tgt) - ctc_loss(m, tgt)) / (2 * eps)
        assert num == pytest.approx(g[t, k], rel=1e-5, abs=1e-8)


def test_gradient_rows_sum_to_zero(rng):
    g = ctc_grad(random_logprobs(rng, 8, 5), target([0, 2, 1], 4))
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-9)


def test_gradient_at_optimum_vanishes():
    # a single path [a, blank, b] carrying (almost) all the mass
    lp = one_hot_frames([0, 2, 1], 3, on=1 - 1e-12)
    g = ctc_grad(lp, target([0, 1], 2))
    assert np.linalg.norm(g) < 1e-6


def test_batch_loss_ignores_padding(rng):
    a = random_logprobs(rng, 6, 4)
    b = random_logprobs(rng, 9, 4)
    batch = np.stack([np.vstack([a, random_logprobs(rng, 3, 4)]), b])
    tg = [target([0, 1], 3), target([2], 3)]
    losses, grad = batch_ctc_loss(batch, [6, 9], tg)
    assert losses[0] == pytest.approx(ctc_loss(a, tg[0]), abs=1e-9)
    assert losses[1] == pytest.approx(ctc_loss(b, tg[1]), abs=1e-9)
    assert np.all(grad[0, 6:] == 0)


# --- greedy / beam -----------------------------------------------------------

def test_greedy_examples(abc):
    assert greedy_decode(one_hot_frames([A, BL, B], 5), abc) == "ab"
    assert greedy_decode(one_hot_frames([BL, BL, BL], 5), abc) == ""


@settings(max_examples=80, deadline=None)
@given(path=st.lists(st.integers(0, 4), min_size=1, max_size=12))
def test_greedy_equals_width_one_beam(path):
    alpha = Alphabet(("a", "b", "c", " "))
    lp = one_hot_frames(path, 5, on=0.96)
    hyp = beam_search_decode(lp, alpha, None, DecoderConfig(beam_width=1, alpha=0.0, beta=0.0))[0]
    assert hyp.prefix == greedy_decode(lp, alpha)


def test_beam_width_validated(abc):
    with pytest.raises(ValueError):
        DecoderConfig(beam_width=0)


def test_wrong_class_count(abc, rng):
    with pytest.raises(ValueError):
        beam_search_decode(random_logprobs(rng, 3, 4), abc)


def test_zero_weights_ignore_lm(abc, rng):
    lm = lmmod.train(["ab c", "c a"], order=2)
    lp = random_logprobs(rng, 6, 5)
    cfg = DecoderConfig(beam_width=16, alpha=0.0, beta=0.0)
    with_lm = beam_search_decode(lp, abc, lm, cfg)
    without = beam_search_decode(lp, abc, None, cfg)
    assert [(h.prefix, h.score) for h in with_lm] == [(h.prefix, h.score) for h in without]
    assert all(h.score == h.acoustic for h in without)


def test_homophone_resolved_by_lm(abc):
    # frame 3 is space or blank with equal mass, so "ab c" and "abc" tie acoustically
    probs = np.zeros((4, 5))
    probs[0, A] = probs[1, B] = probs[3, C] = 1.0
    probs[2, SP] = probs[2, BL] = 0.5
    with np.errstate(divide="ignore"):
        lp = np.log(probs)
    assert ctc_loss(lp, target(encode("ab c", abc).labels, BL)) == ctc_loss(lp, target(encode("abc", abc).labels, BL))
    lm = lmmod.train(["ab c"] * 5 + ["c ab", "ab ab c"], order=2)
    assert lm.score("ab c") > lm.score("abc") + 1.0
    hyps = beam_search_decode(lp, abc, lm, DecoderConfig(beam_width=32, alpha=1.0, beta=0.0))
    assert hyps[0].prefix == "ab c"


def test_scores_sorted(abc, rng):
    lm = lmmod.train(["ab c", "c a", "b"], order=2)
    hyps = beam_search_decode(random_logprobs(rng, 7, 5), abc, lm, DecoderConfig(beam_width=20, alpha=0.8, beta=0.3))
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)
    assert len(hyps) <= 20


TINY = Alphabet(("a", "b", " "))
TINY_LM = lmmod.train(["a b", "ab a", "b", "a a b", "ba"], order=2)


@settings(max_examples=40, deadline=None)
@given(T=st.integers(1, 5), seed=st.integers(0, 10 ** 6),
       alpha=st.floats(0.0, 2.0), beta=st.floats(-1.0, 2.0))
def test_beam_equals_exhaustive(T, seed, alpha, beta):
    lp = random_logprobs(np.random.default_rng(seed), T, 4)
    text, score = exhaustive_decode(lp, TINY, TINY_LM, alpha, beta)
    top = beam_search_decode(lp, TINY, TINY_LM, DecoderConfig(beam_width=1000, alpha=alpha, beta=beta))[0]
    assert top.prefix == text
    assert top.score == pytest.approx(score, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(T=st.integers(2, 8), seed=st.integers(0, 10 ** 6), width=st.integers(1, 12))
def test_pruned_beam_never_beats_exact(T, seed, width):
    # A wider beam can still lose the top score of a narrower one when a new
    # candidate pushes out a prefix that fed the old winner, so the checkable
    # bound is against the unpruned search.
    lp = random_logprobs(np.random.default_rng(seed), T, 4)
    cfg = dict(alpha=1.0, beta=0.5)
    exact = beam_search_decode(lp, TINY, TINY_LM, DecoderConfig(beam_width=10 ** 4, **cfg))[0].score
    pruned = beam_search_decode(lp, TINY, TINY_LM, DecoderConfig(beam_width=width, **cfg))[0].score
    assert pruned <= exact + 1e-9


def test_width_beyond_prefix_count_is_stable(rng):
    lp = random_logprobs(rng, 5, 4)
    results = [beam_search_decode(lp, TINY, TINY_LM, DecoderConfig(beam_width=w, alpha=1.0, beta=0.5))[0]
               for w in (364, 500, 5000)]
    assert len({(h.prefix, h.score) for h in results}) == 1


def test_known_width_non_monotone_case():
    probs = np.array([[0.164, 0.051, 0.612, 0.172],
                      [0.087, 0.083, 0.431, 0.399],
                      [0.003, 0.066, 0.202, 0.729],
                      [0.723, 0.229, 0.015, 0.032],
                      [0.230, 0.009, 0.288, 0.473]])
    lp = np.log(probs / probs.sum(axis=1, keepdims=True))
    s2, s3 = (beam_search_decode(lp, TINY, None, DecoderConfig(beam_width=w, alpha=0, beta=0))[0].score
              for w in (2, 3))
    assert s3 < s2


def test_fused_score_matches_beam(rng):
    lp = random_logprobs(rng, 5, 4)
    for h in beam_search_decode(lp, TINY, TINY_LM, DecoderConfig(beam_width=50, alpha=0.7, beta=0.2))[:5]:
        assert fused_score(h.prefix, h.acoustic, TINY_LM, 0.7, 0.2) == pytest.approx(h.score, abs=1e-9)


def test_cutoff_top_n_limits_candidates(abc):
    lp = one_hot_frames([A, BL, B, SP, C], 5, on=0.9)
    hyps = beam_search_decode(lp, abc, None, DecoderConfig(beam_width=8, alpha=0, beta=0, cutoff_top_n=1))
    assert hyps[0].prefix == "ab c"


def test_grid_search_prefers_lm_when_it_helps(abc):
    probs = np.full((4, 5), 1e-4)
    probs[0, A] = probs[1, B] = probs[3, C] = 1.0
    probs[2, SP], probs[2, BL] = 0.45, 0.55
    lp = np.log(probs / probs.sum(axis=1, keepdims=True))
    lm = lmmod.train(["ab c"] * 5 + ["c ab"], order=2)
    best_wer, a, _ = grid_search_fusion([(lp, "ab c")], abc, lm, [0.0, 1.0], [0.0], wer)
    assert best_wer == 0.0 and a == 1.0
