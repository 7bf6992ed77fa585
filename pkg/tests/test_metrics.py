import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from oracles import edit_distance
from arasr.metrics import DegenerateTestError, align, betainc, cer, paired_t_test, student_t_sf2, wer


def test_identity():
    r = wer("a b c", "a b c")
    assert (r.substitutions, r.deletions, r.insertions, r.wer) == (0, 0, 0, 0.0)


def test_one_substitution():
    r = wer("a b c", "a x c")
    assert r.substitutions == 1 and r.wer == pytest.approx(1 / 3)


def test_insertions_beyond_reference():
    r = wer("a", "x y z")
    assert (r.substitutions, r.deletions, r.insertions) == (1, 0, 2)
    assert r.wer == 3.0


def test_empty_reference():
    with pytest.raises(ValueError):
        wer("", "a")


def test_empty_hypothesis_deletes_everything():
    r = wer("a b c", "")
    assert r.deletions == 3 and r.wer == 1.0


def test_tie_break_prefers_substitution():
    r = align(["a", "b"], ["b", "a"])
    assert [op for op, _, _ in r.alignment] == ["S", "S"]


def test_cer_examples():
    assert cer("abc", "abc").wer == 0.0
    r = cer("ab", "b")
    assert r.deletions == 1 and r.wer == 0.5
    assert cer("ab c", "").wer <= 1.0


def test_reports_add():
    total = wer("a b", "a") + wer("c", "d")
    assert total.as_record() == {"S": 1, "D": 1, "I": 0, "N": 3, "WER": 2 / 3}


tokens = st.lists(st.sampled_from("abcde"), max_size=12)


@settings(max_examples=300, deadline=None)
@given(ref=tokens.filter(bool), hyp=tokens)
def test_matches_independent_dp(ref, hyp):
    r = align(ref, hyp)
    assert r.errors == edit_distance(ref, hyp)
    kept = [x for op, x, _ in r.alignment if op in "=SD"]
    produced = [y for op, _, y in r.alignment if op in "=SI"]
    assert kept == ref and produced == hyp


@settings(max_examples=100, deadline=None)
@given(words=st.lists(st.sampled_from(["a", "bb", "c"]), min_size=1, max_size=8), pad=st.sampled_from([" ", "  ", "\t"]))
def test_self_and_whitespace(words, pad):
    text = " ".join(words)
    assert wer(text, text).wer == 0.0
    assert wer(pad + pad.join(words) + pad, text).wer == 0.0


def test_t_identical_arrays():
    t, p, df = paired_t_test([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    assert (t, p, df) == (0.0, 1.0, 2)


def test_t_zero_variance():
    with pytest.raises(DegenerateTestError):
        paired_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])


def test_t_too_few_pairs():
    with pytest.raises(DegenerateTestError):
        paired_t_test([0.1], [0.2])


def test_t_textbook_constant():
    a = [0.30, 0.25, 0.40, 0.20]
    b = [0.35, 0.30, 0.38, 0.31]
    d = [Fraction(x).limit_denominator(1000) - Fraction(y).limit_denominator(1000) for x, y in zip(a, b)]
    mean = sum(d) / 4
    var = sum((x - mean) ** 2 for x in d) / 3
    expected = float(mean) / math.sqrt(float(var) / 4)
    t, p, df = paired_t_test(a, b)
    assert t == pytest.approx(expected, rel=1e-12)
    assert t == pytest.approx(-1.7873696499, abs=1e-9)
    assert df == 3
    assert p == pytest.approx(stats.ttest_rel(a, b).pvalue, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=30))
def test_t_antisymmetric(pairs):
    a, b = np.array(pairs).T
    try:
        t_ab = paired_t_test(a, b)[0]
    except DegenerateTestError:
        return
    assert paired_t_test(b, a)[0] == -t_ab


@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.3), (2.0, 3.0, 0.7), (10.0, 0.5, 0.95), (0.5, 40.0, 0.01), (5.0, 5.0, 0.5)])
def test_betainc_against_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-12)


@pytest.mark.parametrize("t,df", [(0.0, 5), (1.5, 3), (-2.2, 10), (4.0, 1), (0.3, 200)])
def test_t_tail_against_scipy(t, df):
    assert student_t_sf2(t, df) == pytest.approx(2 * stats.t.sf(abs(t), df), abs=1e-8)
