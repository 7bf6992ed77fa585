"""Word/character error rates from Levenshtein alignment, and the paired t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DegenerateTestError(ValueError):
    pass


@dataclass(frozen=True)
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    reference_words: int
    alignment: tuple = ()  # (op, ref_token, hyp_token) with op in {"=", "S", "D", "I"}

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words

    def as_record(self) -> dict:
        return {"S": self.substitutions, "D": self.deletions, "I": self.insertions,
                "N": self.reference_words, "WER": self.wer}

    def __add__(self, other: "WerReport") -> "WerReport":
        return WerReport(self.substitutions + other.substitutions, self.deletions + other.deletions,
                         self.insertions + other.insertions, self.reference_words + other.reference_words)


def align(ref: list, hyp: list) -> WerReport:
    """Unit-cost edit distance with traceback; ties prefer substitution, then insertion, then deletion."""
    if not ref:
        raise ValueError("reference is empty; error rate is undefined")
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        r = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (r != hyp[j - 1])
            row[j] = min(sub, row[j - 1] + 1, prev[j] + 1)
    ops = []
    i, j = n, m
    S = D = I = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            same = ref[i - 1] == hyp[j - 1]
            ops.append(("=" if same else "S", ref[i - 1], hyp[j - 1]))
            S += not same
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ops.append(("I", None, hyp[j - 1]))
            I += 1
            j -= 1
        else:
            ops.append(("D", ref[i - 1], None))
            D += 1
            i -= 1
    return WerReport(S, D, I, n, tuple(reversed(ops)))


def wer(reference: str, hypothesis: str) -> WerReport:
    return align(reference.split(), hypothesis.split())


def cer(reference: str, hypothesis: str) -> WerReport:
    """Character-level rate; whitespace runs count as one space character."""
    return align(list(" ".join(reference.split())), list(" ".join(hypothesis.split())))


# --- significance ------------------------------------------------------------

def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 500) -> float:
    """Continued fraction for the regularized incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def paired_t_test(scores_a, scores_b) -> tuple[float, float, int]:
    """Paired two-sided t-test on per-utterance scores; returns (t, p, df)."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("score arrays must be 1-D and of equal length")
    n = len(a)
    if n < 2:
        raise DegenerateTestError("need at least two pairs")
    d = a - b
    if np.all(d == 0):
        return 0.0, 1.0, n - 1
    sd = d.std(ddof=1)
    if sd == 0 or sd < 1e-14 * max(1.0, abs(d.mean())):
        raise DegenerateTestError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, student_t_sf2(t, n - 1), n - 1
