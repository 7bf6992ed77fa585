"""Word-level interpolated Kneser-Ney n-gram language model with ARPA I/O."""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
BOS_LOG10 = -99.0
_NGRAM_HEADER = re.compile(r"^\\(\d+)-grams:$")


class LmTrainingError(ValueError):
    pass


class ArpaFormatError(ValueError):
    pass


@dataclass
class NGramModel:
    order: int
    probs: dict = field(default_factory=dict)  # tuple[str, ...] -> log10 P
    backoffs: dict = field(default_factory=dict)  # context tuple -> log10 backoff weight
    discounts: list = field(default_factory=list)
    header: dict = field(default_factory=dict)  # free-form metadata written as ARPA comments

    BOS = BOS
    EOS = EOS
    UNK = UNK

    @property
    def vocab(self) -> set[str]:
        return {g[0] for g in self.probs if len(g) == 1}

    def predictable(self) -> list[str]:
        """Tokens that can appear as the predicted word (everything but <s>)."""
        return sorted(w for w in self.vocab if w != BOS)

    def log10_prob(self, word: str, history=()) -> float:
        """log10 P(word | history) with standard backoff lookup; OOV maps to <unk>."""
        vocab_hit = (word,) in self.probs
        if not vocab_hit:
            word = UNK
        hist = tuple(h if (h,) in self.probs else UNK for h in history)
        hist = hist[-(self.order - 1):] if self.order > 1 else ()
        penalty = 0.0
        while True:
            gram = hist + (word,)
            p = self.probs.get(gram)
            if p is not None:
                return p + penalty
            if not hist:
                raise KeyError(f"{word!r} has no unigram entry")
            penalty += self.backoffs.get(hist, 0.0)
            hist = hist[1:]

    def score(self, sentence: str, bos: bool = True, eos: bool = True) -> float:
        """Total log10 probability of a space-tokenized sentence."""
        words = sentence.split()
        hist = [BOS] if bos else []
        total = 0.0
        for w in words + ([EOS] if eos else []):
            total += self.log10_prob(w, tuple(hist))
            hist.append(w)
        return total

    def perplexity(self, sentences) -> float:
        lps = []
        count = 0
        for s in sentences:
            lps.append(self.score(s))
            count += len(s.split()) + 1
        return 10.0 ** (-math.fsum(lps) / count)

    @classmethod
    def uniform(cls, words) -> "NGramModel":
        """Unigram model assigning equal mass to ``words`` (callers include </s> and <unk>)."""
        words = sorted(set(words) - {BOS})
        lp = -math.log10(len(words))
        probs = {(w,): lp for w in words}
        probs[(BOS,)] = BOS_LOG10
        return cls(order=1, probs=probs)


def _pad(sentence: str) -> list[str]:
    return [BOS] + sentence.split() + [EOS]


def discount_from_counts(counts) -> float:
    """Absolute discount D = n1 / (n1 + 2 n2) from counts-of-counts."""
    coc = Counter(c for c in counts if c > 0)
    n1, n2 = coc.get(1, 0), coc.get(2, 0)
    if n1 == 0:
        return 0.5
    return n1 / (n1 + 2 * n2)


def train(sentences, order: int = 4, discount: float | None = None) -> NGramModel:
    """Interpolated Kneser-Ney with one discount per order.

    Discounts are estimated from counts-of-counts unless ``discount`` fixes
    one value for every order.

    The highest order uses raw counts; lower orders use continuation counts
    (number of distinct left extensions), except n-grams that start with <s>,
    which keep raw counts because nothing can precede them. Unigrams are
    interpolated with a uniform distribution over the predictable vocabulary
    including <unk>.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if discount is not None and not 0.0 < discount < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {discount}")
    sentences = [s for s in sentences if s.split()]
    if not sentences:
        raise LmTrainingError("training corpus has no non-empty sentences")

    raw = [Counter() for _ in range(order + 1)]
    for s in sentences:
        toks = _pad(s)
        for n in range(1, order + 1):
            for i in range(len(toks) - n + 1):
                gram = tuple(toks[i:i + n])
                if gram[-1] == BOS:
                    continue
                raw[n][gram] += 1

    adjusted = [Counter() for _ in range(order + 1)]
    adjusted[order] = Counter(raw[order])
    for n in range(order - 1, 0, -1):
        cont = Counter()
        for gram in raw[n + 1]:
            cont[gram[1:]] += 1
        adj = Counter()
        for gram, c in raw[n].items():
            adj[gram] = c if gram[0] == BOS else cont[gram]
        adjusted[n] = adj

    model = NGramModel(order=order)
    vocab = sorted({g[0] for g in raw[1]} | {EOS, UNK})
    lower: dict[tuple, float] = {}  # order n-1 interpolated probabilities, linear space

    for n in range(1, order + 1):
        counts = adjusted[n]
        D = discount if discount is not None else discount_from_counts(counts.values())
        model.discounts.append(D)
        totals = defaultdict(float)
        types = defaultdict(int)
        for gram, c in counts.items():
            totals[gram[:-1]] += c
            types[gram[:-1]] += 1
        gamma = {h: D * types[h] / totals[h] for h in totals}

        current = {}
        if n == 1:
            g0 = gamma.get((), 1.0)
            for w in vocab:
                c = counts.get((w,), 0)
                current[(w,)] = max(c - D, 0.0) / totals[()] + g0 / len(vocab)
        else:
            for gram, c in counts.items():
                h = gram[:-1]
                # every suffix of an observed n-gram has a positive lower-order count
                current[gram] = (c - D) / totals[h] + gamma[h] * lower[gram[1:]]
        for h, g in gamma.items():
            if h:
                model.backoffs[h] = math.log10(g)
        for gram, p in current.items():
            model.probs[gram] = math.log10(p)
        lower = current
    model.probs[(BOS,)] = BOS_LOG10
    return model


# --- ARPA --------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.12f}"


def export_arpa(model: NGramModel) -> str:
    by_order = defaultdict(list)
    for gram in model.probs:
        by_order[len(gram)].append(gram)
    lines = [f"# {k}: {v}" for k, v in sorted(model.header.items())]
    lines += ["", "\\data\\"]
    for n in range(1, model.order + 1):
        lines.append(f"ngram {n}={len(by_order[n])}")
    for n in range(1, model.order + 1):
        lines += ["", f"\\{n}-grams:"]
        for gram in sorted(by_order[n]):
            row = f"{_fmt(model.probs[gram])}\t{' '.join(gram)}"
            if n < model.order and gram in model.backoffs:
                row += f"\t{_fmt(model.backoffs[gram])}"
            lines.append(row)
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def import_arpa(text: str) -> NGramModel:
    lines = text.split("\n")
    header = {}
    i = 0
    while i < len(lines) and lines[i].strip() != "\\data\\":
        line = lines[i].strip()
        if line.startswith("#") and ":" in line:
            k, v = line[1:].split(":", 1)
            header[k.strip()] = v.strip()
        i += 1
    if i == len(lines):
        raise ArpaFormatError("missing \\data\\ section")
    i += 1
    declared = {}
    while i < len(lines) and lines[i].strip().startswith("ngram "):
        m = re.match(r"ngram\s+(\d+)\s*=\s*(\d+)$", lines[i].strip())
        if not m:
            raise ArpaFormatError(f"line {i + 1}: bad count line {lines[i]!r}")
        declared[int(m.group(1))] = int(m.group(2))
        i += 1
    if not declared:
        raise ArpaFormatError("no ngram counts declared")
    order = max(declared)
    model = NGramModel(order=order, header=header)
    seen = Counter()
    current = None
    ended = False
    for j in range(i, len(lines)):
        line = lines[j].strip()
        if not line:
            continue
        if line == "\\end\\":
            ended = True
            break
        m = _NGRAM_HEADER.match(line)
        if m:
            current = int(m.group(1))
            if current not in declared:
                raise ArpaFormatError(f"line {j + 1}: section {current}-grams was not declared")
            continue
        if line.startswith("\\"):
            raise ArpaFormatError(f"line {j + 1}: malformed section header {line!r}")
        if current is None:
            raise ArpaFormatError(f"line {j + 1}: n-gram entry outside any section")
        parts = line.split("\t") if "\t" in line else line.split()
        if "\t" in line:
            fields = [parts[0]] + parts[1].split() + parts[2:]
        else:
            fields = parts
        if len(fields) not in (current + 1, current + 2):
            raise ArpaFormatError(f"line {j + 1}: expected {current} words, got {line!r}")
        try:
            lp = float(fields[0])
            bo = float(fields[current + 1]) if len(fields) == current + 2 else None
        except ValueError:
            raise ArpaFormatError(f"line {j + 1}: non-numeric probability") from None
        gram = tuple(fields[1:current + 1])
        model.probs[gram] = lp
        if bo is not None:
            model.backoffs[gram] = bo
        seen[current] += 1
    if not ended:
        raise ArpaFormatError("missing \\end\\ marker")
    for n, c in declared.items():
        if seen[n] != c:
            raise ArpaFormatError(f"{n}-grams: header declares {c} entries, found {seen[n]}")
    return model


def save_arpa(model: NGramModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(export_arpa(model))


def load_arpa(path) -> NGramModel:
    with open(path, encoding="utf-8") as fh:
        return import_arpa(fh.read())
