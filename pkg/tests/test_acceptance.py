"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` to see the lines alongside the results.
"""

import importlib.util
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (brute_force_ctc, edit_distance, exhaustive_decode, finite_difference_check,
                     random_logprobs, toy_net_factory)
from arasr import audio as au
from arasr import features as fe
from arasr import lm as lmmod
from arasr.acoustic.layers import clipped_relu
from arasr.acoustic.optim import LrSchedule
from arasr.corpus import ManifestEntry, split
from arasr.ctc import CtcTarget, DecoderConfig, batch_ctc_loss, beam_search_decode, ctc_loss
from arasr.lm import NGramModel
from arasr.metrics import align, wer
from arasr.text import Alphabet

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


def test_criterion_1_ctc_oracle(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        T, K = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        lp = random_logprobs(rng, T, K)
        blank = K - 1
        labels = rng.integers(0, K - 1, int(rng.integers(0, T + 1)))
        want = brute_force_ctc(lp, labels, blank)
        got = ctc_loss(lp, CtcTarget(labels, blank))
        worst = max(worst, 0.0 if math.isinf(want) and math.isinf(got) else abs(got - want))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-10 and elapsed < 10,
           f"200 instances, max |loss - brute force| = {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_network_gradient(report):
    rng = np.random.default_rng(7)
    net = toy_net_factory()()
    x = rng.normal(size=(2, 12, 16))
    lens = np.array([12, 9])
    targets = [CtcTarget(np.array([0, 1, 1]), 5), CtcTarget(np.array([2, 3]), 5)]

    def loss_fn():
        lp, out_len = net.forward(x, lens, mode="train")
        loss, grad = batch_ctc_loss(lp, out_len, targets)
        return float(loss.sum()), grad
    t0 = time.perf_counter()
    err = finite_difference_check(net, loss_fn, eps=1e-4)
    elapsed = time.perf_counter() - t0
    report(2, err < 1e-3 and elapsed < 60,
           f"{net.num_parameters()} parameters, max relative error {err:.2e}, {elapsed:.1f}s")


def test_criterion_3_decoder_oracle(report):
    alphabet = Alphabet(("a", "b", " "))
    model = lmmod.train(["a b", "ab a", "b", "a a b", "ba"], order=2)
    rng = np.random.default_rng(99)
    hits = 0
    for _ in range(100):
        T = int(rng.integers(1, 6))
        lp = random_logprobs(rng, T, 4)
        alpha, beta = float(rng.uniform(0, 2)), float(rng.uniform(-1, 2))
        text, score = exhaustive_decode(lp, alphabet, model, alpha, beta)
        top = beam_search_decode(lp, alphabet, model, DecoderConfig(beam_width=1000, alpha=alpha, beta=beta))[0]
        hits += top.prefix == text and abs(top.score - score) <= 1e-9
    report(3, hits == 100, f"beam search matches exhaustive argmax in {hits}/100 instances")


def test_criterion_4_lm(report):
    toy = ["a b", "a c", "b a"]
    model = lmmod.train(toy, order=2)
    const_err = abs(10 ** model.log10_prob("b", ("a",)) - 1429 / 5400)

    corpus = toy + ["a b a c", "c c b", "b", "a b c a b"]
    mass_err = 0.0
    for order in (1, 2, 3, 4, 5):
        m = lmmod.train(corpus, order=order)
        ctxs = {()} | {g[:n] for g in m.probs for n in range(1, len(g))}
        for h in ctxs:
            if h and h[-1] == lmmod.EOS:
                continue
            mass = math.fsum(10 ** m.log10_prob(w, h) for w in m.predictable())
            mass_err = max(mass_err, abs(mass - 1.0))

    m3 = lmmod.train(corpus, order=3)
    back = lmmod.import_arpa(lmmod.export_arpa(m3))
    probe = corpus + ["zz a b", "c a c a", "a"]
    drift = max(abs(back.score(s) - m3.score(s)) for s in probe)

    ppl_err = 0.0
    for V in (2, 5, 7, 64):
        uniform = NGramModel.uniform([f"w{i}" for i in range(V - 1)] + ["</s>"])
        ppl_err = max(ppl_err, abs(uniform.perplexity(["w0", "w0 w0"]) / V - 1.0))
    report(4, const_err <= 1e-9 and mass_err <= 1e-6 and drift < 1e-9 and ppl_err <= 1e-12,
           f"KN constant error {const_err:.1e}, max normalization error {mass_err:.1e}, "
           f"ARPA drift {drift:.1e}, uniform perplexity relative error {ppl_err:.1e}")


def test_criterion_5_wer(report):
    a = wer("a b c", "a b c")
    b = wer("a b c", "a x c")
    c = wer("a", "x y z")
    examples = ((a.substitutions, a.deletions, a.insertions, a.wer) == (0, 0, 0, 0.0)
                and b.substitutions == 1 and abs(b.wer - 1 / 3) < 1e-15
                and (c.substitutions, c.insertions) == (1, 2) and c.wer == 3.0)
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(1000):
        ref = [f"w{i}" for i in rng.integers(0, 5, int(rng.integers(1, 9)))]
        hyp = [f"w{i}" for i in rng.integers(0, 5, int(rng.integers(0, 9)))]
        mismatches += align(ref, hyp).errors != edit_distance(ref, hyp)
    report(5, examples and mismatches == 0,
           f"tagged examples {'match' if examples else 'differ'}, {1000 - mismatches}/1000 random pairs agree")


def test_criterion_6_frontend(report):
    rate = 16000
    t = np.arange(2 * rate) / rate
    out = au.highpass(au.AudioBuffer(0.5 * np.sin(2 * np.pi * 150 * t), rate), 150).samples
    steady = out[rate // 2:]
    gain_db = 20 * np.log10(np.sqrt(2 * np.mean(steady ** 2)) / 0.5)
    dc = np.max(np.abs(au.highpass(au.AudioBuffer(np.full(rate, 0.5), rate), 150).samples[rate // 10:]))
    one_s = fe.spectrogram(au.AudioBuffer(np.random.default_rng(0).uniform(-0.5, 0.5, rate), rate))
    sine = fe.spectrogram(au.AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t[:rate]), rate))
    peak = int(np.argmax(sine.frames.mean(axis=0)))
    ok = abs(gain_db + 3.0) <= 0.2 and dc < 1e-3 and (one_s.T, one_s.F) == (99, 161) and peak == 20
    report(6, ok, f"150 Hz gain {gain_db:.3f} dB, DC residual {dc:.1e}, "
                  f"1 s spectrogram {one_s.T}x{one_s.F}, 1 kHz peak at bin {peak}")


def _load_overfit_script():
    spec = importlib.util.spec_from_file_location("toy_overfit", ROOT / "scripts" / "toy_overfit.py")
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    spec.loader.exec_module(module)
    return module


@pytest.mark.slow
def test_criterion_7_toy_overfit(report, tmp_path):
    script = _load_overfit_script()
    script.build_corpus(tmp_path)
    first = script.run_once(tmp_path)
    second = script.run_once(tmp_path)
    same = first.checkpoint == second.checkpoint
    ok = (first.epochs <= 300 and first.mean_loss < 0.1 and max(first.losses) < 0.1
          and first.wer <= 0.05 and same)
    report(7, ok, f"{first.epochs} epochs, mean loss {first.mean_loss:.4f}, max loss {max(first.losses):.4f}, "
                  f"greedy WER {first.wer:.2%}, identical checkpoints {same}, "
                  f"{first.seconds:.0f}s + {second.seconds:.0f}s")


def test_criterion_8_constants(report):
    sched = LrSchedule()
    lrs = [sched.lr(e) for e in range(6)]
    lr_ok = lrs == [0.001, 0.001, 0.0001, 0.0001, 0.00001, 0.00001]
    clip = clipped_relu(25.0)
    entries = [ManifestEntry(f"u{i:03d}", Path(f"u{i:03d}.wav"), 3.0, "x") for i in range(100)]
    sizes = tuple(len(p) for p in split(entries))
    report(8, lr_ok and clip == 20.0 and sizes == (70, 20, 10),
           f"lr {lrs}, clipped_relu(25) = {clip}, split sizes {sizes}")
