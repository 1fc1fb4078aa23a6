"""Evaluation protocol: frame-level F1, threshold-tolerant F1, inter-user
consensus, and greedy oracle summaries built from multi-user annotations.

All matching is on exact (view, time-step) pairs; the tolerant variant
additionally credits a prediction whose frame coincides in time with a truth
frame on another view when the two L2-normalized input features are closer
than 2*tau (unit vectors are never farther apart than 2, so tau is a
fraction of the maximum possible distance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import AnnotationSet, MultiViewSequence, ShotList, Summary, SummaryBudget
from .errors import ValidationError

Selection = tuple[int, int]


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def frame_f1(predicted: Summary, truth: Summary) -> tuple[float, float, float]:
    """Precision, recall, F1 on exact (view, t) matches."""
    truth_set = truth.selection_set
    if not truth_set:
        raise ValidationError("truth summary is empty; recall is undefined")
    pred_set = predicted.selection_set
    if not pred_set:
        return (0.0, 0.0, 0.0)
    hits = len(pred_set & truth_set)
    precision = hits / len(pred_set)
    recall = hits / len(truth_set)
    return (precision, recall, _f1(precision, recall))


def _set_f1(a: set[Selection], b: set[Selection]) -> float:
    """Pair convention used for consensus: two empty sets agree perfectly,
    one empty set agrees with nothing."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    hits = len(a & b)
    return _f1(hits / len(a), hits / len(b))


def tolerant_f1(
    predicted: Summary,
    truth: Summary,
    sequence: MultiViewSequence,
    tau: float,
) -> float:
    """F1 where a (v, t) counts as matching (v', t) when the normalized
    features are within 2*tau. Non-decreasing in tau; tau=0 is exact."""
    if tau < 0:
        raise ValidationError(f"tau must be non-negative, got {tau}")
    truth_set = truth.selection_set
    if not truth_set:
        raise ValidationError("truth summary is empty; recall is undefined")
    pred_set = predicted.selection_set
    if not pred_set:
        return 0.0

    feats = sequence.features.astype(np.float64)
    norms = np.linalg.norm(feats, axis=2)
    unit = np.divide(feats, norms[..., None], out=np.zeros_like(feats), where=norms[..., None] > 0)

    def matches(source: set[Selection], target: set[Selection]) -> int:
        by_step: dict[int, list[int]] = {}
        for view, t in target:
            by_step.setdefault(t, []).append(view)
        count = 0
        for view, t in source:
            if (view, t) in target:
                count += 1
                continue
            count += any(
                np.linalg.norm(unit[view, t] - unit[other, t]) < 2.0 * tau
                for other in by_step.get(t, ())
            )
        return count

    precision = matches(pred_set, truth_set) / len(pred_set)
    recall = matches(truth_set, pred_set) / len(truth_set)
    return _f1(precision, recall)


def pairwise_consensus(annotations: AnnotationSet) -> float:
    """Mean frame-level F1 over all unordered user pairs."""
    selections = annotations.user_selections()
    users = sorted(selections)
    if len(users) < 2:
        raise ValidationError(f"consensus needs at least 2 users, got {len(users)}")
    scores = [
        _set_f1(selections[users[i]], selections[users[j]])
        for i in range(len(users))
        for j in range(i + 1, len(users))
    ]
    return float(np.mean(scores))


def _shot_lists_per_view(shots, num_views: int) -> list[ShotList]:
    if isinstance(shots, ShotList):
        return [shots] * num_views
    lists = list(shots)
    if len(lists) != num_views:
        raise ValidationError(f"{len(lists)} shot lists for {num_views} views")
    return lists


def oracle_summary(
    annotations: AnnotationSet,
    shots,
    budget: SummaryBudget = SummaryBudget(),
    num_views: int | None = None,
) -> Summary:
    """Greedy shot selection maximizing mean F1 against the users.

    ``shots`` is one ShotList shared by every view or a per-view sequence of
    them. Starting empty, the (shot, view) pair with the largest strictly
    positive gain in mean F1 is added; pairs that would exceed the frame
    budget are skipped; ties prefer the smallest (shot, view).
    """
    selections = annotations.user_selections()
    if not selections:
        raise ValidationError("oracle needs at least one user with selections")
    user_sets = [selections[u] for u in sorted(selections)]
    if any(not s for s in user_sets):
        raise ValidationError("oracle needs every user to have selections")

    if num_views is None:
        if isinstance(shots, ShotList):
            num_views = 1 + max((v for s in user_sets for v, _ in s), default=0)
        else:
            num_views = len(list(shots))
    shot_lists = _shot_lists_per_view(shots, num_views)
    num_steps = shot_lists[0].num_steps
    budget_frames = budget.frame_budget(num_steps)

    candidates = sorted(
        (shot, view)
        for view in range(num_views)
        for shot in range(shot_lists[view].num_shots)
    )

    def mean_f1(frames: set[Selection]) -> float:
        return float(np.mean([_set_f1(frames, users) for users in user_sets]))

    chosen: set[tuple[int, int]] = set()
    frames: set[Selection] = set()
    current = mean_f1(frames)
    while True:
        best_gain, best_pair, best_frames = 0.0, None, None
        for shot, view in candidates:
            if (shot, view) in chosen:
                continue
            a, b = shot_lists[view].shot_span(shot)
            trial = frames | {(view, t) for t in range(a, b)}
            if len(trial) > budget_frames:
                continue
            gain = mean_f1(trial) - current
            if gain > best_gain:
                best_gain, best_pair, best_frames = gain, (shot, view), trial
        if best_pair is None:
            break
        chosen.add(best_pair)
        frames = best_frames
        current += best_gain
    return Summary(selections=tuple(frames), budget_fraction=budget.fraction)


@dataclass(frozen=True)
class SequenceEval:
    sequence_id: str
    precision: float
    recall: float
    f1: float
    threshold_f1: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class EvalReport:
    """Macro-averaged scores plus the per-sequence breakdown."""

    precision: float
    recall: float
    f1: float
    threshold_f1: tuple[tuple[float, float], ...]
    sequences: tuple[SequenceEval, ...]


DEFAULT_THRESHOLDS = (0.0, 0.1, 0.2, 0.3)


def build_report(entries, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """entries: iterable of (sequence_id, predicted, truth, sequence)."""
    rows = []
    for sequence_id, predicted, truth, sequence in entries:
        precision, recall, f1 = frame_f1(predicted, truth)
        sweep = tuple(
            (float(tau), tolerant_f1(predicted, truth, sequence, tau)) for tau in thresholds
        )
        rows.append(
            SequenceEval(
                sequence_id=sequence_id, precision=precision, recall=recall, f1=f1,
                threshold_f1=sweep,
            )
        )
    if not rows:
        raise ValidationError("nothing to evaluate")
    mean_sweep = tuple(
        (float(tau), float(np.mean([dict(r.threshold_f1)[tau] for r in rows])))
        for tau in thresholds
    )
    return EvalReport(
        precision=float(np.mean([r.precision for r in rows])),
        recall=float(np.mean([r.recall for r in rows])),
        f1=float(np.mean([r.f1 for r in rows])),
        threshold_f1=mean_sweep,
        sequences=tuple(rows),
    )
