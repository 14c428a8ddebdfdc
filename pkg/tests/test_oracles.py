"""Frozen values of the independent oracles, checked before they check anything else."""
from fractions import Fraction

import pytest

from oracles import (
    brute_metrics,
    mixture_sensitivity,
    normal_interval,
    pairwise_auc,
    trapezoid_auc,
)


def test_hand_evaluated_f1_case():
    m = brute_metrics(tp=2, fp=1, tn=0, fn=1)
    assert m["ppv"] == Fraction(2, 3)
    assert m["sensitivity"] == Fraction(2, 3)
    assert m["f1"] == Fraction(2, 3)


def test_four_pair_auc():
    # pairs (0.35,0.1) win, (0.35,0.4) lose, (0.8,0.1) win, (0.8,0.4) win
    assert pairwise_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == Fraction(3, 4)
    assert trapezoid_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == Fraction(3, 4)


def test_oracles_agree_on_ties():
    scores = [0.5, 0.5, 0.5, 0.2, 0.9]
    labels = [1, 0, 1, 0, 1]
    assert pairwise_auc(scores, labels) == trapezoid_auc(scores, labels) == Fraction(5, 6)


def test_normal_approximation_interval():
    lo, hi = normal_interval(0.8, 1000)
    assert lo == pytest.approx(0.775208, abs=1e-6)
    assert hi == pytest.approx(0.824792, abs=1e-6)


def test_two_block_mixture():
    overall = mixture_sensitivity([(5000, 0.4, 0.53), (5000, 0.4, 0.76)])
    assert overall == pytest.approx(0.645)
    assert 0.53 - overall == pytest.approx(-0.115)
    assert 0.53 - 0.76 == pytest.approx(-0.23)
