"""Exact-match precision / recall / F1 over sentiment triplets.

A predicted triplet counts as a true positive only if some gold triplet
of the same sentence matches its aspect span, opinion span, and polarity
exactly. Counts are pooled over sentences (micro average); a per-sentence
macro average is available separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Sequence

from .corpus import Triplet


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        return cls(precision, recall, f1, tp, fp, fn)


def score(
    pred: Sequence[Collection[Triplet]],
    gold: Sequence[Collection[Triplet]],
) -> PRF:
    """Micro-averaged exact-match scores over aligned sentence lists."""
    if len(pred) != len(gold):
        raise ValueError(
            f"prediction and gold lists differ in length: {len(pred)} vs {len(gold)}"
        )
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        p, g = set(p), set(g)
        hits = len(p & g)
        tp += hits
        fp += len(p) - hits
        fn += len(g) - hits
    return PRF.from_counts(tp, fp, fn)


def score_macro(
    pred: Sequence[Collection[Triplet]],
    gold: Sequence[Collection[Triplet]],
) -> PRF:
    """Per-sentence P/R/F1 averaged uniformly; counts are still the pooled
    totals. Reported alongside, never instead of, the micro scores."""
    if len(pred) != len(gold):
        raise ValueError(
            f"prediction and gold lists differ in length: {len(pred)} vs {len(gold)}"
        )
    per_sentence = [score([p], [g]) for p, g in zip(pred, gold)]
    micro = score(pred, gold)
    k = len(per_sentence)
    if k == 0:
        return micro
    return PRF(
        precision=sum(s.precision for s in per_sentence) / k,
        recall=sum(s.recall for s in per_sentence) / k,
        f1=sum(s.f1 for s in per_sentence) / k,
        tp=micro.tp,
        fp=micro.fp,
        fn=micro.fn,
    )


def format_report(prf: PRF, title: str = "triplet exact match") -> str:
    return (
        f"{title}: P={prf.precision:.4f} R={prf.recall:.4f} F1={prf.f1:.4f} "
        f"(tp={prf.tp} fp={prf.fp} fn={prf.fn})"
    )
