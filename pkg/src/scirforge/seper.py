"""Belief-shift answer filter.

An answer is scored teacher-forced under the backend twice: conditioned on
the question alone, and on the question plus supporting context.  The shift
between the two length-normalized confidences decides acceptance; a positive
shift means the context genuinely raised the model's belief in the answer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Decision, FilterVerdict, PipelineError, QAPair
from .gateway import Gateway, ScoredContinuation

WITHOUT_CONTEXT_TEMPLATE = "Question: {q}\nAnswer:"
WITH_CONTEXT_TEMPLATE = "Context: {d}\nQuestion: {q}\nAnswer:"


def answer_confidence(scored: ScoredContinuation) -> float:
    """Length-normalized sequence probability: exp(mean token logprob)."""
    return math.exp(math.fsum(scored.logprobs) / len(scored.logprobs))


def delta_seper(
    q: str,
    d: str,
    a: str,
    gateway: Gateway,
    without_template: str = WITHOUT_CONTEXT_TEMPLATE,
    with_template: str = WITH_CONTEXT_TEMPLATE,
) -> FilterVerdict:
    """Score the answer with and without context and apply the sign rule."""
    if not q.strip() or not a.strip():
        raise ValueError("question and answer must be nonempty")
    continuation = " " + a
    conf_without = answer_confidence(
        gateway.score_continuation(
            without_template.format(q=q), continuation, stage="score_without"
        )
    )
    conf_with = answer_confidence(
        gateway.score_continuation(
            with_template.format(d=d, q=q), continuation, stage="score_with"
        )
    )
    delta = conf_with - conf_without
    decision = Decision.ACCEPT if delta > 0 else Decision.REJECT
    return FilterVerdict(
        delta=delta, decision=decision, conf_with=conf_with, conf_without=conf_without
    )


def filter_corpus(
    pairs: Sequence[QAPair],
    context_of: Mapping[str, str],
    gateway: Gateway,
) -> list[QAPair]:
    """Attach a verdict to every pair, scoring against its dataset's context."""
    out: list[QAPair] = []
    for pair in pairs:
        if pair.dataset_id not in context_of:
            raise PipelineError(f"pair {pair.id}: no context for dataset {pair.dataset_id}")
        verdict = delta_seper(pair.question, context_of[pair.dataset_id], pair.answer, gateway)
        out.append(pair.with_verdict(verdict))
    return out


@dataclass(frozen=True)
class FilterEvalReport:
    precision: float | None
    recall: float
    f1: float | None
    pr_points: tuple[tuple[float, float], ...] = ()
    roc_points: tuple[tuple[float, float], ...] = ()


def evaluate_filter(
    decisions: Sequence[Decision], labels: Sequence[bool]
) -> FilterEvalReport:
    """Precision/recall/F1 of Accept decisions against boolean quality labels."""
    if len(decisions) != len(labels):
        raise ValueError("decisions and labels must have equal length")
    if not decisions:
        raise ValueError("nothing to evaluate")
    positives = sum(1 for lab in labels if lab)
    if positives == 0:
        raise ValueError("labels contain no positives; recall is undefined")
    tp = fp = 0
    for decision, label in zip(decisions, labels):
        if Decision(decision) is Decision.ACCEPT:
            if label:
                tp += 1
            else:
                fp += 1
    recall = tp / positives
    if tp + fp == 0:
        return FilterEvalReport(precision=None, recall=recall, f1=None)
    precision = tp / (tp + fp)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return FilterEvalReport(precision=precision, recall=recall, f1=f1)


def curve_points(
    deltas: Sequence[float], labels: Sequence[bool]
) -> tuple[tuple[tuple[float, float], ...], tuple[tuple[float, float], ...]]:
    """PR and ROC points from sweeping the accept threshold over delta values.

    Thresholds are the distinct deltas in descending order; at each, the
    decision is delta > threshold.  Conventions: precision is 1.0 when
    nothing is accepted (the zero-prediction limit of the PR curve).
    """
    if len(deltas) != len(labels):
        raise ValueError("deltas and labels must have equal length")
    positives = sum(1 for lab in labels if lab)
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise ValueError("curves need at least one positive and one negative label")
    pr: list[tuple[float, float]] = []
    roc: list[tuple[float, float]] = []
    for threshold in sorted(set(deltas), reverse=True):
        tp = fp = 0
        for delta, label in zip(deltas, labels):
            if delta > threshold:
                if label:
                    tp += 1
                else:
                    fp += 1
        recall = tp / positives
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        pr.append((recall, precision))
        roc.append((fp / negatives, tp / positives))
    return tuple(pr), tuple(roc)
