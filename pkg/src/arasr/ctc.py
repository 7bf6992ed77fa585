"""CTC loss/gradient via the log-space forward-backward recursion, plus decoders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .text import Alphabet

NEG_INF = -np.inf
LN10 = math.log(10.0)


class InfeasibleTargetError(ValueError):
    """The target cannot be emitted in the available number of frames."""


@dataclass(frozen=True)
class CtcTarget:
    labels: np.ndarray
    blank: int

    @property
    def augmented(self) -> np.ndarray:
        aug = np.full(2 * len(self.labels) + 1, self.blank, dtype=np.int64)
        aug[1::2] = self.labels
        return aug

    def min_frames(self) -> int:
        lab = np.asarray(self.labels)
        repeats = int(np.sum(lab[1:] == lab[:-1])) if len(lab) > 1 else 0
        return len(lab) + repeats


def logaddexp(a: float, b: float) -> float:
    """Scalar log(exp(a) + exp(b)) that is exact for -inf operands."""
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def collapse_labels(path, blank: int) -> list[int]:
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def collapse(path, alphabet: Alphabet) -> str:
    """Merge adjacent repeats, then drop blanks."""
    return "".join(alphabet.symbols[k] for k in collapse_labels(path, alphabet.blank_index))


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def _skip_mask(aug: np.ndarray, blank: int) -> np.ndarray:
    """True where the s-2 -> s transition is allowed (label differs from the one two back)."""
    allow = np.zeros(len(aug), dtype=bool)
    allow[2:] = (aug[2:] != blank) & (aug[2:] != aug[:-2])
    return allow


def forward_backward(logprobs: np.ndarray, target: CtcTarget):
    """Log-space forward/backward variables over the blank-augmented target.

    Returns (log_alpha, log_beta, log_likelihood). ``log_alpha[t, s]`` includes
    the emission at frame t; ``log_beta[t, s]`` covers frames t+1.. only, so
    their sum minus the likelihood is the state occupancy.
    """
    T = logprobs.shape[0]
    aug = target.augmented
    S = len(aug)
    skip = _skip_mask(aug, target.blank)
    emit = logprobs[:, aug]  # (T, S)

    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        alpha[0, 1] = emit[0, 1]
        beta[T - 1, S - 2] = 0.0
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = alpha[t - 1]
            acc = prev.copy()
            acc[1:] = np.logaddexp(acc[1:], prev[:-1])
            acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
            alpha[t] = acc + emit[t]
        for t in range(T - 2, -1, -1):
            nxt = beta[t + 1] + emit[t + 1]
            acc = nxt.copy()
            acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
            acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
            beta[t] = acc

    ll = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    return alpha, beta, float(ll)


def ctc_loss(logprobs: np.ndarray, target: CtcTarget) -> float:
    """Negative log-likelihood of the target; +inf when it cannot fit in T frames."""
    logprobs = np.asarray(logprobs, dtype=np.float64)
    if target.min_frames() > logprobs.shape[0]:
        return math.inf
    _, _, ll = forward_backward(logprobs, target)
    return float(-ll)


def ctc_loss_and_grad(logprobs: np.ndarray, target: CtcTarget) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the log-probabilities (minus the frame posteriors)."""
    logprobs = np.asarray(logprobs, dtype=np.float64)
    if target.min_frames() > logprobs.shape[0]:
        raise InfeasibleTargetError(
            f"target needs {target.min_frames()} frames, only {logprobs.shape[0]} available"
        )
    alpha, beta, ll = forward_backward(logprobs, target)
    aug = target.augmented
    occ = alpha + beta - ll
    post = np.zeros_like(logprobs)
    with np.errstate(under="ignore"):
        np.add.at(post, (slice(None), aug), np.exp(occ))
    return float(-ll), -post


def ctc_grad(logprobs: np.ndarray, target: CtcTarget) -> np.ndarray:
    """Gradient of the loss with respect to the pre-softmax logits."""
    _, g = ctc_loss_and_grad(logprobs, target)
    return np.exp(logprobs) + g


def batch_ctc_loss(logprobs: np.ndarray, lengths, targets) -> tuple[np.ndarray, np.ndarray]:
    """Per-item losses and dL/dlogprobs for a padded (B, T, K) batch; frames >= length are ignored."""
    losses = np.zeros(len(targets))
    grad = np.zeros(logprobs.shape, dtype=np.float64)
    for b, (n, tgt) in enumerate(zip(lengths, targets)):
        losses[b], grad[b, :n] = ctc_loss_and_grad(logprobs[b, :n], tgt)
    return losses, grad


# --- decoding ----------------------------------------------------------------

def greedy_decode(logprobs: np.ndarray, alphabet: Alphabet) -> str:
    return collapse(np.argmax(logprobs, axis=1), alphabet)


@dataclass(frozen=True)
class DecoderConfig:
    beam_width: int = 512
    alpha: float = 1.5
    beta: float = 1.0
    cutoff_top_n: int | None = None  # per-frame candidate characters; None = all

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")


@dataclass
class Hypothesis:
    prefix: str
    p_blank: float
    p_nonblank: float
    lm_score: float = 0.0  # natural-log fused LM term, alpha/beta already applied
    word_count: int = 0

    @property
    def acoustic(self) -> float:
        return logaddexp(self.p_blank, self.p_nonblank)

    @property
    def score(self) -> float:
        return self.acoustic + self.lm_score


class _Fusion:
    """Fused LM terms: per completed word and for the sentence end.

    Histories are the words emitted so far; the sentence-start token is
    prepended here so the first word is conditioned on it.
    """

    def __init__(self, lm, alpha: float, beta: float):
        self.lm = lm
        self.alpha = alpha
        self.beta = beta

    def word_term(self, history: tuple[str, ...], word: str) -> float:
        lp = self.lm.log10_prob(word, (self.lm.BOS,) + history) * LN10 if self.lm is not None and self.alpha else 0.0
        return self.alpha * lp + self.beta

    def end_term(self, history: tuple[str, ...]) -> float:
        if self.lm is None or not self.alpha:
            return 0.0
        return self.alpha * self.lm.log10_prob(self.lm.EOS, (self.lm.BOS,) + history) * LN10


def beam_search_decode(logprobs: np.ndarray, alphabet: Alphabet, lm=None,
                       cfg: DecoderConfig = DecoderConfig()) -> list[Hypothesis]:
    """CTC prefix beam search with word-level LM fusion.

    Each prefix carries its blank/non-blank ending probabilities. Emitting a
    space that closes a word adds ``alpha * ln P_LM(word | history) + beta``;
    the trailing word and the sentence end are scored when the search
    finishes. Returns up to ``beam_width`` hypotheses, best first, ties broken
    lexicographically on the prefix.
    """
    if cfg.beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    logprobs = np.asarray(logprobs, dtype=np.float64)
    T, K = logprobs.shape
    if K != alphabet.num_classes:
        raise ValueError(f"expected {alphabet.num_classes} classes, got {K}")
    blank = alphabet.blank_index
    symbols = alphabet.symbols
    rows = logprobs.tolist()
    fusion = _Fusion(lm, cfg.alpha, cfg.beta)
    lm_cache: dict[str, tuple[float, int]] = {"": (0.0, 0)}

    def lm_of(prefix: str) -> tuple[float, int]:
        hit = lm_cache.get(prefix)
        if hit is not None:
            return hit
        parent, last = prefix[:-1], prefix[-1]
        score, count = lm_of(parent)
        if last == " " and parent and parent[-1] != " ":
            words = parent.split()
            score += fusion.word_term(tuple(words[:-1]), words[-1])
            count += 1
        lm_cache[prefix] = (score, count)
        return score, count

    beam: dict[str, list[float]] = {"": [0.0, NEG_INF]}  # prefix -> [p_blank, p_nonblank]
    chars = [k for k in range(K) if k != blank]
    for t in range(T):
        row = rows[t]
        if cfg.cutoff_top_n is not None and cfg.cutoff_top_n < len(chars):
            order = np.argsort(-logprobs[t, chars], kind="stable")[: cfg.cutoff_top_n]
            cand = [chars[i] for i in order]
        else:
            cand = chars
        nxt: dict[str, list[float]] = {}

        def add(prefix, which, value):
            cell = nxt.get(prefix)
            if cell is None:
                cell = nxt[prefix] = [NEG_INF, NEG_INF]
            cell[which] = logaddexp(cell[which], value)

        for prefix, (pb, pnb) in beam.items():
            total = logaddexp(pb, pnb)
            add(prefix, 0, total + row[blank])
            last = prefix[-1] if prefix else None
            for k in cand:
                ch = symbols[k]
                lp = row[k]
                if ch == last:
                    add(prefix, 1, pnb + lp)
                    add(prefix + ch, 1, pb + lp)
                else:
                    add(prefix + ch, 1, total + lp)

        ranked = sorted(nxt.items(), key=lambda kv: (-(logaddexp(*kv[1]) + lm_of(kv[0])[0]), kv[0]))
        beam = dict(ranked[: cfg.beam_width])

    hyps = []
    for prefix, (pb, pnb) in beam.items():
        score, count = lm_of(prefix)
        words = prefix.split()
        if prefix and prefix[-1] != " ":
            score += fusion.word_term(tuple(words[:-1]), words[-1])
            count += 1
        score += fusion.end_term(tuple(words))
        hyps.append(Hypothesis(prefix, float(pb), float(pnb), float(score), count))
    hyps.sort(key=lambda h: (-h.score, h.prefix))
    return hyps[: cfg.beam_width]


def fused_score(text: str, acoustic_logprob: float, lm, alpha: float, beta: float) -> float:
    """Objective that beam search maximizes, for a complete transcript."""
    words = text.split()
    lm_term = 0.0
    if lm is not None and alpha:
        lm_term = alpha * lm.score(" ".join(words)) * LN10
    return acoustic_logprob + lm_term + beta * len(words)


def grid_search_fusion(utterances, alphabet: Alphabet, lm, alphas, betas, wer_fn,
                       beam_width: int = 64, cutoff_top_n: int | None = 16):
    """Pick (alpha, beta) minimizing corpus WER on (logprobs, reference) pairs."""
    best = None
    for a in alphas:
        for b in betas:
            cfg = DecoderConfig(beam_width=beam_width, alpha=a, beta=b, cutoff_top_n=cutoff_top_n)
            errs = words = 0
            for lp, ref in utterances:
                hyp = beam_search_decode(lp, alphabet, lm, cfg)[0].prefix
                rep = wer_fn(ref, " ".join(hyp.split()))
                errs += rep.substitutions + rep.deletions + rep.insertions
                words += rep.reference_words
            wer = errs / max(words, 1)
            if best is None or wer < best[0]:
                best = (wer, a, b)
    return best
