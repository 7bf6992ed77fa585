"""Slow, obviously-correct reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math

import numpy as np

from arasr.ctc import collapse_labels, fused_score, ctc_loss, CtcTarget


def brute_force_ctc(logprobs: np.ndarray, labels, blank: int) -> float:
    """-log of the summed probability of every length-T path that collapses to ``labels``."""
    T, K = logprobs.shape
    target = list(labels)
    total = 0.0
    for path in itertools.product(range(K), repeat=T):
        if collapse_labels(path, blank) == target:
            total += math.exp(sum(logprobs[t, k] for t, k in enumerate(path)))
    return -math.log(total) if total > 0 else math.inf


def all_labelings(symbols: int, max_len: int):
    for n in range(max_len + 1):
        yield from itertools.product(range(symbols), repeat=n)


def exhaustive_decode(logprobs: np.ndarray, alphabet, lm, alpha: float, beta: float):
    """Best (text, objective) over every labeling that fits in T frames."""
    T = logprobs.shape[0]
    best = None
    for lab in all_labelings(len(alphabet.symbols), T):
        tgt = CtcTarget(np.array(lab, dtype=np.int64), alphabet.blank_index)
        loss = ctc_loss(logprobs, tgt)
        if math.isinf(loss):
            continue
        text = "".join(alphabet.symbols[i] for i in lab)
        score = fused_score(text, -loss, lm, alpha, beta)
        if best is None or score > best[1] or (score == best[1] and text < best[0]):
            best = (text, score)
    return best


def edit_distance(a, b) -> int:
    """Plain two-row Levenshtein distance."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def random_logprobs(rng, T: int, K: int) -> np.ndarray:
    z = rng.normal(size=(T, K)) * 2.0
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def toy_net_factory():
    """Small float64 network for finite-difference checks: 1 conv (4 filters), 1 biGRU of width 8."""
    from arasr.acoustic.model import AcousticNet, ArchitectureConfig, ConvLayerSpec, RnnLayerSpec

    def make(num_classes=6, seed=0, input_bins=16, cell="gru"):
        arch = ArchitectureConfig(input_bins=input_bins, conv=[ConvLayerSpec(4, (5, 3), (2, 2))],
                                  rnn=[RnnLayerSpec(cell, 8, dropout=0.0)], dtype="float64")
        return AcousticNet(arch, num_classes, seed=seed)
    return make


def finite_difference_check(net, loss_fn, eps: float = 1e-4, per_param: int | None = None, seed: int = 0):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` runs a train-mode forward and returns (loss, dloss/dlogprobs).
    """
    rng = np.random.default_rng(seed)
    loss, g = loss_fn()
    grads = net.backward(g)
    worst = 0.0
    for name, p in net.params.items():
        flat = p.reshape(-1)
        idx = range(flat.size) if per_param is None else rng.choice(flat.size, min(per_param, flat.size), replace=False)
        an = grads[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn()[0]
            flat[i] = orig - eps
            lm = loss_fn()[0]
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            denom = max(abs(num), abs(an[i]), 1e-7)
            worst = max(worst, abs(num - an[i]) / denom)
    return worst


def direct_conv2d(x: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    """Loop-over-outputs 'same' cross-correlation, channels-last, matching the fixed left pad."""
    from arasr.acoustic.layers import same_padding

    B, T, F, C = x.shape
    O, _, kf, kt = w.shape
    sf, st = stride
    Fo, fl, fr = same_padding(F, kf, sf)
    To, tl, tr = same_padding(T, kt, st)
    xp = np.zeros((B, tl + T + max(tr, 0) + kt, fl + F + max(fr, 0) + kf, C))
    xp[:, tl:tl + T, fl:fl + F] = x
    out = np.zeros((B, To, Fo, O))
    for t in range(To):
        for f in range(Fo):
            patch = xp[:, t * st:t * st + kt, f * sf:f * sf + kf, :]
            out[:, t, f] = np.einsum("bjac,ocaj->bo", patch, w)
    return out
