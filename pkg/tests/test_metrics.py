import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkguide.attribution import rank_factors
from dkguide.errors import EmptyCounts, EmptyInput, LengthMismatch, NotAPermutation
from dkguide.metrics import (
    confusion_counts,
    kendall_tau,
    macro_f1,
    micro_f1,
    pairwise_consistency,
    per_class_f1,
    stability_summary,
)


def brute_tau(a, b):
    n = len(a)
    c = d = 0
    for i, j in itertools.combinations(range(n), 2):
        s = (a[i] - a[j]) * (b[i] - b[j])
        c += s > 0
        d += s < 0
    return c, d, Fraction(c - d, n * (n - 1) // 2)


def test_perfect_classifier():
    counts = confusion_counts([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert macro_f1(counts) == 1.0 and micro_f1(counts) == 1.0


def test_two_by_two_half():
    counts = np.array([[1, 1], [1, 1]])
    assert micro_f1(counts) == 0.5 and macro_f1(counts) == 0.5


def test_single_class_predictions():
    counts = confusion_counts([0, 0, 1, 1], [0, 0, 0, 0], 2)
    assert micro_f1(counts) == 0.5
    assert macro_f1(counts) == pytest.approx(1 / 3, abs=1e-15)


def test_absent_class_scores_zero():
    counts = confusion_counts([0, 1], [0, 1], 3)
    assert per_class_f1(counts).tolist() == [1.0, 1.0, 0.0]
    assert macro_f1(counts) == pytest.approx(2 / 3)


def test_empty_counts():
    with pytest.raises(EmptyCounts):
        micro_f1(np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_micro_equals_accuracy(c, seed):
    rng = np.random.default_rng(seed)
    t, p = rng.integers(0, c, 40), rng.integers(0, c, 40)
    assert micro_f1(confusion_counts(t, p, c)) == np.mean(t == p)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 20), min_size=2, max_size=6))
def test_diagonal_macro_equals_micro(diag):
    counts = np.diag(diag)
    assert macro_f1(counts) == micro_f1(counts) == 1.0


def test_tau_identity_and_reversal():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]).tau == 1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]).tau == -1.0


def test_tau_worked_case():
    r = kendall_tau([1, 2, 3, 4], [1, 3, 2, 4])
    assert (r.concordant, r.discordant, r.n) == (5, 1, 4)
    assert r.tau == 4 / 6


def test_tau_errors():
    with pytest.raises(LengthMismatch):
        kendall_tau([1, 2, 3], [1, 2])
    with pytest.raises(NotAPermutation):
        kendall_tau([1, 1, 2], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        kendall_tau([0], [0])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**32 - 1))
def test_tau_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.permutation(n), rng.permutation(n)
    r = kendall_tau(a, b)
    c, d, tau = brute_tau(a, b)
    assert (r.concordant, r.discordant) == (c, d)
    assert r.tau == float(tau)
    # reversing the ranking b maps rank r to n-1-r
    assert kendall_tau(a, n - 1 - b).tau == -r.tau


def test_pairwise_consistency_cases():
    same = [rank_factors([3, 2, 1]), rank_factors([3, 2, 1])]
    mat, mean = pairwise_consistency(same)
    assert mean == 1.0 and np.all(mat == 1)
    _, mean = pairwise_consistency([[1, 2, 3, 4], [4, 3, 2, 1]])
    assert mean == -1.0
    mat, mean = pairwise_consistency([[1, 2, 3, 4], [1, 2, 3, 4], [4, 3, 2, 1]])
    assert mean == pytest.approx(-1 / 3, abs=1e-15)
    assert np.array_equal(mat, mat.T) and np.all(np.diag(mat) == 1)


def test_stability_summary_cases():
    s = stability_summary([1, 2, 3, 4, 5])
    assert (s.min, s.q1, s.median, s.q3, s.max, s.mean) == (1, 2, 3, 4, 5, 3)
    assert stability_summary([7]).to_dict() == dict.fromkeys(
        ("min", "q1", "median", "q3", "max", "mean"), 7.0)
    two = stability_summary([0.5, 0.6])
    assert two.median == pytest.approx(0.55) and two.mean == pytest.approx(0.55)
    with pytest.raises(EmptyInput):
        stability_summary([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_stability_ordering(values):
    s = stability_summary(values)
    assert s.min <= s.q1 <= s.median <= s.q3 <= s.max
