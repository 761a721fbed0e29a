import itertools
import random

import numpy as np
import pytest

from utils.errors import EmptyInput, MismatchedPolicySets, ZeroBaseline
from utils.metrics import (JudgmentPair, PolicyRanking, action_match_score, agreement, kendall_tau, rank_policies,
                           relative_improvement, success_rate)
from utils.trajectory_core import Action


def pairs(predicted, oracle):
    return [JudgmentPair(f"t{i}", p, o) for i, (p, o) in enumerate(zip(predicted, oracle))]


def ranking(scores):
    return PolicyRanking(tuple(scores.items()))


# ===== Agreement =====

@pytest.mark.parametrize("predicted,oracle,counts", [
    ([1, 1, 0, 0], [1, 0, 0, 1], (1, 1, 1, 1)),
    ([1, 1, 1], [1, 1, 1], (3, 0, 0, 0)),
    ([0, 0, 0], [0, 0, 0], (0, 0, 3, 0)),
    ([1, 1, 1, 1], [0, 0, 0, 0], (0, 4, 0, 0)),
    ([0, 0], [1, 1], (0, 0, 0, 2)),
    ([1], [0], (0, 1, 0, 0)),
    ([1, 0, 1, 0, 1], [1, 0, 0, 1, 1], (2, 1, 1, 1)),
    ([0, 1, 1, 0, 0, 1], [0, 1, 1, 0, 0, 1], (3, 0, 3, 0)),
    ([1, 0, 0, 0, 0, 0, 0, 1], [1, 1, 1, 0, 0, 0, 0, 0], (1, 1, 4, 2)),
    ([0, 1, 0, 1], [1, 0, 1, 0], (0, 2, 0, 2)),
])
def test_agreement_hand_counts(predicted, oracle, counts):
    report = agreement(pairs(map(bool, predicted), map(bool, oracle)))
    tp, fp, tn, fn = counts
    assert (report.tp, report.fp, report.tn, report.fn) == counts
    assert report.n == len(predicted) == tp + fp + tn + fn
    assert report.accuracy == pytest.approx((tp + tn) / report.n)


def test_agreement_on_flipped_labels():
    rng = np.random.default_rng(2024)
    oracle = rng.random(1000) < 0.5
    predicted = oracle.copy()
    flipped = rng.choice(1000, size=100, replace=False)
    predicted[flipped] = ~predicted[flipped]
    report = agreement(pairs(predicted.tolist(), oracle.tolist()))
    assert 0.88 <= report.accuracy <= 0.92


def test_agreement_ignores_order():
    data = pairs([True, False, True, True, False], [True, True, False, True, False])
    shuffled = list(data)
    random.Random(3).shuffle(shuffled)
    assert agreement(shuffled) == agreement(data)


def test_agreement_payload():
    payload = agreement(pairs([True, False], [True, True])).to_payload()
    assert payload == {"accuracy": 0.5, "confusion": {"tp": 1, "fp": 0, "tn": 0, "fn": 1}, "n": 2}


def test_agreement_needs_pairs():
    with pytest.raises(EmptyInput):
        agreement([])


# ===== Kendall tau =====

def inversions(order):
    return sum(1 for i, j in itertools.combinations(range(len(order)), 2) if order[i] > order[j])


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_kendall_tau_matches_inversion_count(n):
    reference = ranking({f"p{i}": float(n - i) for i in range(n)})
    for order in itertools.permutations(range(n)):
        other = ranking({f"p{i}": float(n - order[i]) for i in range(n)})
        expected = 1 - 4 * inversions(order) / (n * (n - 1))
        assert kendall_tau(reference, other) == pytest.approx(expected)
        assert kendall_tau(other, reference) == pytest.approx(expected)


def test_kendall_tau_fixtures():
    four = ranking({"a": 0.8, "b": 0.6, "c": 0.4, "d": 0.2})
    assert kendall_tau(four, four) == 1.0
    swapped = ranking({"a": 0.8, "b": 0.4, "c": 0.6, "d": 0.2})
    assert kendall_tau(four, swapped) == pytest.approx(4 / 6)
    three = ranking({"a": 3.0, "b": 2.0, "c": 1.0})
    assert kendall_tau(three, ranking({"a": 1.0, "b": 2.0, "c": 3.0})) == -1.0


def test_kendall_tau_ties_count_as_neither():
    a = ranking({"x": 1.0, "y": 1.0, "z": 0.0})
    b = ranking({"x": 2.0, "y": 1.0, "z": 0.0})
    assert kendall_tau(a, b) == pytest.approx(2 / 3)


def test_kendall_tau_ignores_entry_order():
    a = PolicyRanking((("a", 0.9), ("b", 0.5), ("c", 0.1)))
    b = PolicyRanking((("c", 0.2), ("a", 0.7), ("b", 0.3)))
    assert kendall_tau(a, b) == 1.0


def test_kendall_tau_errors():
    with pytest.raises(MismatchedPolicySets):
        kendall_tau(ranking({"a": 1, "b": 0}), ranking({"a": 1, "c": 0}))
    with pytest.raises(EmptyInput):
        kendall_tau(ranking({"a": 1}), ranking({"a": 0}))


def test_policy_ranking_validation():
    with pytest.raises(ValueError):
        PolicyRanking((("a", 1.0), ("a", 0.5)))
    with pytest.raises(ValueError):
        PolicyRanking((("a", float("nan")),))


def test_rank_policies_sorts_by_score_then_id():
    outcomes = [("b", True), ("a", True), ("c", False), ("b", False), ("a", False), ("c", True), ("d", True)]
    assert rank_policies(outcomes).entries == (("d", 1.0), ("a", 0.5), ("b", 0.5), ("c", 0.5))
    with pytest.raises(EmptyInput):
        rank_policies([])


# ===== Action matching =====

def test_identical_actions_match_fully():
    actions = [Action.click(0.5, 0.5), Action.type_text("wifi"), Action.swipe("up"), Action.press_back(),
               Action.stop("done")]
    assert action_match_score(actions, actions) == 1.0


def test_click_within_radius_matches():
    assert action_match_score([Action.click(0.55, 0.5)], [Action.click(0.5, 0.5)]) == 1.0
    assert action_match_score([Action.click(0.8, 0.5)], [Action.click(0.5, 0.5)]) == 0.0
    assert action_match_score([Action.click(0.8, 0.5)], [Action.click(0.5, 0.5)], tap_radius=0.4) == 1.0


def test_kind_mismatch_never_matches():
    predicted = [Action.type_text("a")] * 3
    reference = [Action.click(0.1, 0.1)] * 3
    assert action_match_score(predicted, reference) == 0.0


def test_stop_answers_must_agree():
    assert action_match_score([Action.stop("wrong")], [Action.stop("42")]) == 0.0
    assert action_match_score([Action.stop("42")], [Action.stop("42")]) == 1.0
    assert action_match_score([Action.stop()], [Action.stop("42")]) == 0.0
    assert action_match_score([Action.stop()], [Action.stop()]) == 1.0


def test_partial_and_length_mismatch():
    reference = [Action.click(0.5, 0.5), Action.type_text("wifi"), Action.swipe("up"), Action.stop()]
    predicted = [Action.click(0.5, 0.52), Action.type_text("wi-fi"), Action.swipe("up")]
    assert action_match_score(predicted, reference) == 0.5
    assert action_match_score(reference + [Action.press_home()], reference) == 1.0
    with pytest.raises(EmptyInput):
        action_match_score(predicted, [])


# ===== Success rates =====

def test_success_rate_and_relative_improvement():
    assert success_rate([True] * 8 + [False] * 44) == pytest.approx(8 / 52)
    assert relative_improvement(8 / 52, 14 / 52) == pytest.approx(0.75, abs=1e-9)
    assert relative_improvement(15 / 96, 26 / 96) == pytest.approx(11 / 15, abs=1e-9)
    assert relative_improvement(0.3, 0.3) == 0.0


def test_relative_improvement_needs_positive_base():
    with pytest.raises(ZeroBaseline):
        relative_improvement(0.0, 0.5)
    with pytest.raises(EmptyInput):
        success_rate([])
