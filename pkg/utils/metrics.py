"""
Evaluation Metrics Module
Evaluator-vs-oracle agreement, policy rank correlation, action matching and
success-rate arithmetic
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from utils.errors import EmptyInput, MismatchedPolicySets, ZeroBaseline
from utils.trajectory_core import Action, ActionKind

# Confusion counting falls back to plain counting without scikit-learn
try:
    from sklearn.metrics import confusion_matrix
    SKLEARN_AVAILABLE = True
except ImportError:
    SKLEARN_AVAILABLE = False

logger = logging.getLogger(__name__)

# Click tolerance in normalized screen units
DEFAULT_TAP_RADIUS = 0.14


@dataclass(frozen=True)
class JudgmentPair:
    task_id: str
    predicted: bool
    oracle: bool


@dataclass(frozen=True)
class AgreementReport:
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    n: int

    def to_payload(self) -> Dict[str, object]:
        return {
            "accuracy": self.accuracy,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "n": self.n,
        }


@dataclass(frozen=True)
class PolicyRanking:
    """Policies with their scores; ties allowed, order of entries is not significant"""

    entries: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        entries = tuple((str(p), float(s)) for p, s in self.entries)
        for policy_id, score in entries:
            if not math.isfinite(score):
                raise ValueError(f"score of {policy_id} is not finite")
        if len({p for p, _ in entries}) != len(entries):
            raise ValueError("a policy appears twice in the ranking")
        object.__setattr__(self, "entries", entries)

    @property
    def scores(self) -> Dict[str, float]:
        return dict(self.entries)


def agreement(pairs: Sequence[JudgmentPair]) -> AgreementReport:
    """
    Confusion counts and accuracy of predicted verdicts against the oracle

    Args:
        pairs: One (predicted, oracle) pair per task

    Returns:
        AgreementReport with tp+fp+tn+fn == n
    """

    if not pairs:
        raise EmptyInput("agreement needs at least one judgment pair")

    predicted = [bool(p.predicted) for p in pairs]
    oracle = [bool(p.oracle) for p in pairs]

    if SKLEARN_AVAILABLE:
        tn, fp, fn, tp = (int(v) for v in confusion_matrix(oracle, predicted, labels=[False, True]).ravel())
    else:
        tp = sum(1 for p, o in zip(predicted, oracle) if p and o)
        fp = sum(1 for p, o in zip(predicted, oracle) if p and not o)
        tn = sum(1 for p, o in zip(predicted, oracle) if not p and not o)
        fn = sum(1 for p, o in zip(predicted, oracle) if not p and o)

    n = len(pairs)
    return AgreementReport(accuracy=(tp + tn) / n, tp=tp, fp=fp, tn=tn, fn=fn, n=n)


def kendall_tau(a: PolicyRanking, b: PolicyRanking) -> float:
    """
    Kendall tau-a between two rankings of the same policies

    Every pair of policies is visited; ties count as neither concordant nor
    discordant and no tie correction is applied.

    Raises:
        MismatchedPolicySets: the rankings cover different policies
        EmptyInput: fewer than two policies
    """

    sa, sb = a.scores, b.scores
    if set(sa) != set(sb):
        raise MismatchedPolicySets(f"policy sets differ: {sorted(set(sa) ^ set(sb))}")
    policies = sorted(sa)
    if len(policies) < 2:
        raise EmptyInput("kendall_tau needs at least two policies")

    concordant = discordant = 0
    for x, y in itertools.combinations(policies, 2):
        sign = np.sign(sa[x] - sa[y]) * np.sign(sb[x] - sb[y])
        if sign > 0:
            concordant += 1
        elif sign < 0:
            discordant += 1

    n_pairs = len(policies) * (len(policies) - 1) // 2
    return (concordant - discordant) / n_pairs


def _actions_match(pred: Action, ref: Action, tap_radius: float) -> bool:
    if pred.kind != ref.kind:
        return False
    if ref.kind == ActionKind.CLICK:
        return math.dist(pred.coords, ref.coords) <= tap_radius
    if ref.kind in (ActionKind.TYPE, ActionKind.RAW, ActionKind.STOP):
        return pred.text == ref.text
    if ref.kind == ActionKind.SWIPE:
        return pred.direction == ref.direction
    return True


def action_match_score(predicted: Sequence[Action], reference: Sequence[Action],
                       tap_radius: float = DEFAULT_TAP_RADIUS) -> float:
    """
    Positional partial action match against a reference demonstration

    This is a geometric stand-in for element-based matching: clicks match when
    they land within tap_radius of the reference click. Positions past the
    shorter sequence count as misses.

    Args:
        predicted: Agent actions
        reference: Demonstration actions (non-empty)
        tap_radius: Click tolerance in normalized units

    Returns:
        Fraction of reference positions matched, in [0, 1]
    """

    if not reference:
        raise EmptyInput("action matching needs a non-empty reference")
    aligned = min(len(predicted), len(reference))
    matched = sum(1 for i in range(aligned) if _actions_match(predicted[i], reference[i], tap_radius))
    return matched / len(reference)


def success_rate(outcomes: Sequence[bool]) -> float:
    if len(outcomes) == 0:
        raise EmptyInput("success_rate needs at least one outcome")
    return float(np.mean(np.asarray(outcomes, dtype=float)))


def relative_improvement(base: float, new: float) -> float:
    """(new - base) / base"""

    if base <= 0:
        raise ZeroBaseline(f"relative improvement is undefined for base rate {base}")
    return (new - base) / base


def rank_policies(outcomes: Iterable[Tuple[str, bool]]) -> PolicyRanking:
    """
    Success-rate ranking per policy

    Args:
        outcomes: (policy_id, success) per evaluated trajectory

    Returns:
        PolicyRanking sorted by descending score, then policy id
    """

    by_policy: Dict[str, List[bool]] = {}
    for policy_id, success in outcomes:
        by_policy.setdefault(policy_id, []).append(bool(success))
    if not by_policy:
        raise EmptyInput("rank_policies needs at least one outcome")
    scored = [(p, success_rate(v)) for p, v in by_policy.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return PolicyRanking(tuple(scored))
