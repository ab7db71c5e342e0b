"""Turn fused tag logits into sentiment triplets.

Decoding runs in two steps: maximal runs of A / O tags in the 1D argmax
sequence become aspect and opinion spans, then each (aspect, opinion)
pair collects the 2D argmax classes of its word-pair cells and takes the
majority vote. Only upper-triangle cells (min index, max index) are
consulted, matching the symmetric gold labeling.

Majority ties are broken by the summed fused logit of each tied class
over the cells that voted for it, then by the fixed priority
Pos > Neg > Neu. A pair whose cells are all N yields no triplet.
"""

from __future__ import annotations

import numpy as np

from .corpus import (
    PAIR_NONE,
    TAG_ASPECT,
    TAG_NONE,
    TAG_OPINION,
    Sentiment,
    Span,
    TagTargets,
    Triplet,
)

# applied only after count and logit-sum ties
_TIE_PRIORITY = (Sentiment.POS, Sentiment.NEG, Sentiment.NEU)


def extract_spans(tags1d: np.ndarray) -> tuple[list[Span], list[Span]]:
    """Maximal runs of consecutive A tags and O tags, left to right."""
    tags1d = np.asarray(tags1d)
    aspects: list[Span] = []
    opinions: list[Span] = []
    n = tags1d.shape[0]
    i = 0
    while i < n:
        tag = int(tags1d[i])
        j = i
        while j + 1 < n and int(tags1d[j + 1]) == tag:
            j += 1
        if tag == TAG_ASPECT:
            aspects.append(Span(i, j))
        elif tag == TAG_OPINION:
            opinions.append(Span(i, j))
        i = j + 1
    return aspects, opinions


def assign_sentiment(
    aspect: Span,
    opinion: Span,
    tags2d: np.ndarray,
    logits2d: np.ndarray,
) -> Sentiment | None:
    """Majority sentiment over the pair's upper-triangle cells, or None if
    every cell is tagged N."""
    votes = {s: 0 for s in Sentiment}
    cells: dict[Sentiment, list[tuple[int, int]]] = {s: [] for s in Sentiment}
    for i in aspect.indices():
        for j in opinion.indices():
            lo, hi = min(i, j), max(i, j)
            tag = int(tags2d[lo, hi])
            if tag == PAIR_NONE:
                continue
            sentiment = Sentiment(tag)
            votes[sentiment] += 1
            cells[sentiment].append((lo, hi))
    top = max(votes.values())
    if top == 0:
        return None
    tied = [s for s in Sentiment if votes[s] == top]
    if len(tied) == 1:
        return tied[0]
    mass = {
        s: float(sum(logits2d[lo, hi, int(s)] for lo, hi in cells[s])) for s in tied
    }
    best = max(mass.values())
    tied = [s for s in tied if mass[s] == best]
    return next(s for s in _TIE_PRIORITY if s in tied)


def decode_triplets(logits1d: np.ndarray, logits2d: np.ndarray) -> frozenset[Triplet]:
    """Decode a sentence's fused logits into its sentiment triplet set."""
    logits1d = np.asarray(logits1d)
    logits2d = np.asarray(logits2d)
    tags1d = np.argmax(logits1d, axis=-1)
    tags2d = np.argmax(logits2d, axis=-1)
    aspects, opinions = extract_spans(tags1d)
    triplets = set()
    for aspect in aspects:
        for opinion in opinions:
            sentiment = assign_sentiment(aspect, opinion, tags2d, logits2d)
            if sentiment is not None:
                triplets.add(Triplet(aspect, opinion, sentiment))
    return frozenset(triplets)


def one_hot_logits(targets: TagTargets) -> tuple[np.ndarray, np.ndarray]:
    """Logits that argmax-decode exactly to the given gold tags (1 on the
    gold class, 0 elsewhere)."""
    n = targets.tags1d.shape[0]
    logits1d = np.zeros((n, 3), dtype=np.float64)
    logits1d[np.arange(n), targets.tags1d] = 1.0
    logits2d = np.zeros((n, n, 4), dtype=np.float64)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    logits2d[ii, jj, targets.tags2d] = 1.0
    return logits1d, logits2d
