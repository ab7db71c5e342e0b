"""Dataset handling for aspect sentiment triplet extraction.

Reads the standard one-sentence-per-line triplet annotation format
(`tokens####[([aspect ids], [opinion ids], 'POS'), ...]`), turns gold
triplets into the 1D {A, O, N} tag sequence plus the symmetric 2D
{Pos, Neu, Neg, N} tag matrix used for training, and builds the word
vocabulary.
"""

from __future__ import annotations

import ast
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# 1D tag ids
TAG_ASPECT = 0
TAG_OPINION = 1
TAG_NONE = 2

# 2D "no relation" class; sentiment classes take ids 0..2 (Sentiment)
PAIR_NONE = 3

VOCAB_FORMAT = "astetag-vocab"
VOCAB_VERSION = 1

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1


class Sentiment(IntEnum):
    POS = 0
    NEU = 1
    NEG = 2

    @classmethod
    def from_label(cls, label: str) -> "Sentiment":
        try:
            return cls[label]
        except KeyError:
            raise ValueError(f"unknown polarity string {label!r}") from None


class ParseError(ValueError):
    """Raised when an annotation line does not follow the file grammar."""

    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class TagConflictError(ValueError):
    """Raised when gold triplets assign inconsistent tags to a token or cell."""

    def __init__(self, message: str, triplets: tuple["Triplet", ...] = ()):
        super().__init__(message)
        self.triplets = triplets


@dataclass(frozen=True, order=True)
class Span:
    """Contiguous token range, inclusive on both ends."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end}]")

    def indices(self) -> range:
        return range(self.start, self.end + 1)

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True, order=True)
class Triplet:
    aspect: Span
    opinion: Span
    sentiment: Sentiment

    def __post_init__(self):
        if set(self.aspect.indices()) & set(self.opinion.indices()):
            raise ValueError(
                f"aspect {self.aspect} and opinion {self.opinion} share tokens"
            )


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[str, ...]
    triplets: frozenset[Triplet]

    def __post_init__(self):
        n = len(self.tokens)
        if n == 0:
            raise ValueError("sentence has no tokens")
        pairs = set()
        for t in self.triplets:
            if t.aspect.end >= n or t.opinion.end >= n:
                raise ValueError(f"triplet {t} exceeds sentence length {n}")
            key = (t.aspect, t.opinion)
            if key in pairs:
                raise ValueError(f"duplicate (aspect, opinion) pair {key}")
            pairs.add(key)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class TagTargets:
    """Gold tagging surfaces: 1D tags over {A, O, N}, 2D matrix over
    {Pos, Neu, Neg, N}. The matrix is symmetric with an all-N diagonal."""

    tags1d: np.ndarray  # (n,) int64
    tags2d: np.ndarray  # (n, n) int64

    def __post_init__(self):
        self.tags1d = np.asarray(self.tags1d, dtype=np.int64)
        self.tags2d = np.asarray(self.tags2d, dtype=np.int64)
        n = self.tags1d.shape[0]
        if self.tags2d.shape != (n, n):
            raise ValueError(
                f"tag shapes disagree: {self.tags1d.shape} vs {self.tags2d.shape}"
            )


def _parse_index_list(raw: object, n_tokens: int, what: str, lineno: int | None) -> Span:
    if not isinstance(raw, list) or not raw or not all(isinstance(i, int) for i in raw):
        raise ParseError(f"{what} index list {raw!r} is not a nonempty list of ints", lineno)
    for a, b in zip(raw, raw[1:]):
        if b != a + 1:
            raise ParseError(f"{what} index list {raw!r} is not contiguous ascending", lineno)
    if raw[0] < 0 or raw[-1] >= n_tokens:
        raise ParseError(
            f"{what} indices {raw!r} out of range for {n_tokens} tokens", lineno
        )
    return Span(raw[0], raw[-1])


def parse_v2_line(line: str, lineno: int | None = None) -> LabeledSentence:
    """Parse one `sentence####[(aspect ids, opinion ids, polarity), ...]` line."""
    parts = line.rstrip("\n").split("####")
    if len(parts) != 2:
        raise ParseError("expected exactly one '####' separator", lineno)
    sentence, annotation = parts
    tokens = tuple(sentence.split())
    if not tokens:
        raise ParseError("empty sentence", lineno)
    try:
        raw_triplets = ast.literal_eval(annotation.strip())
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"unreadable annotation {annotation.strip()!r}: {exc}", lineno)
    if not isinstance(raw_triplets, list):
        raise ParseError(f"annotation is not a list: {annotation.strip()!r}", lineno)

    triplets: set[Triplet] = set()
    pairs: dict[tuple[Span, Span], Sentiment] = {}
    for raw in raw_triplets:
        if not isinstance(raw, tuple) or len(raw) != 3:
            raise ParseError(f"triplet {raw!r} is not a 3-tuple", lineno)
        aspect = _parse_index_list(raw[0], len(tokens), "aspect", lineno)
        opinion = _parse_index_list(raw[1], len(tokens), "opinion", lineno)
        if not isinstance(raw[2], str):
            raise ParseError(f"polarity {raw[2]!r} is not a string", lineno)
        try:
            sentiment = Sentiment.from_label(raw[2])
        except ValueError as exc:
            raise ParseError(str(exc), lineno)
        try:
            triplet = Triplet(aspect, opinion, sentiment)
        except ValueError as exc:
            raise ParseError(str(exc), lineno)
        key = (aspect, opinion)
        if key in pairs and pairs[key] != sentiment:
            raise ParseError(
                f"pair ({aspect}, {opinion}) annotated with conflicting polarities", lineno
            )
        pairs[key] = sentiment
        triplets.add(triplet)
    return LabeledSentence(tokens, frozenset(triplets))


def serialize_v2_line(sentence: LabeledSentence) -> str:
    """Inverse of :func:`parse_v2_line`; triplets are emitted in sorted order."""
    entries = []
    for t in sorted(sentence.triplets):
        entries.append(
            (list(t.aspect.indices()), list(t.opinion.indices()), t.sentiment.name)
        )
    return " ".join(sentence.tokens) + "####" + repr(entries)


def load_v2_file(path: str | Path) -> list[LabeledSentence]:
    """Load every sentence of an annotation file; blank lines are skipped."""
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            sentences.append(parse_v2_line(line, lineno=lineno))
    return sentences


def encode_tags(sentence: LabeledSentence) -> TagTargets:
    """Encode gold triplets as the 1D tag sequence and symmetric 2D tag matrix.

    Raises :class:`TagConflictError` if one token would need both the A and O
    tag, or if two triplets put different sentiments on the same cell.
    """
    n = len(sentence)
    tags1d = np.full(n, TAG_NONE, dtype=np.int64)
    role_owner: dict[int, Triplet] = {}
    for t in sorted(sentence.triplets):
        for role, span, tag in (("aspect", t.aspect, TAG_ASPECT), ("opinion", t.opinion, TAG_OPINION)):
            for i in span.indices():
                if tags1d[i] != TAG_NONE and tags1d[i] != tag:
                    raise TagConflictError(
                        f"token {i} ({sentence.tokens[i]!r}) is tagged both A and O",
                        (role_owner[i], t),
                    )
                tags1d[i] = tag
                role_owner.setdefault(i, t)

    tags2d = np.full((n, n), PAIR_NONE, dtype=np.int64)
    cell_owner: dict[tuple[int, int], Triplet] = {}
    for t in sorted(sentence.triplets):
        for i in t.aspect.indices():
            for j in t.opinion.indices():
                lo, hi = min(i, j), max(i, j)
                current = tags2d[lo, hi]
                if current != PAIR_NONE and current != int(t.sentiment):
                    raise TagConflictError(
                        f"cell ({lo}, {hi}) assigned both "
                        f"{Sentiment(current).name} and {t.sentiment.name}",
                        (cell_owner[(lo, hi)], t),
                    )
                tags2d[lo, hi] = int(t.sentiment)
                tags2d[hi, lo] = int(t.sentiment)
                cell_owner.setdefault((lo, hi), t)
    return TagTargets(tags1d, tags2d)


def encodable(sentences: Iterable[LabeledSentence], n_max: int | None = None,
              warn: bool = True) -> list[tuple[LabeledSentence, TagTargets]]:
    """Pair sentences with their tag targets, dropping conflicting or
    over-long sentences with a warning."""
    kept = []
    for s in sentences:
        if n_max is not None and len(s) > n_max:
            if warn:
                logger.warning(
                    "skipping %d-token sentence (limit %d): %s ...",
                    len(s), n_max, " ".join(s.tokens[:8]),
                )
            continue
        try:
            targets = encode_tags(s)
        except TagConflictError as exc:
            if warn:
                logger.warning("skipping sentence with conflicting annotation: %s", exc)
            continue
        kept.append((s, targets))
    return kept


@dataclass
class Vocabulary:
    """Word-to-id map with reserved PAD (0) and UNK (1) entries."""

    word_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.word_to_id.get(PAD_TOKEN) != PAD_ID or self.word_to_id.get(UNK_TOKEN) != UNK_ID:
            raise ValueError("vocabulary must reserve PAD=0 and UNK=1")
        ids = sorted(self.word_to_id.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocabulary ids must be dense in [0, |V|)")

    def __len__(self) -> int:
        return len(self.word_to_id)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array(
            [self.word_to_id.get(t, UNK_ID) for t in tokens], dtype=np.int64
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{VOCAB_FORMAT}\t{VOCAB_VERSION}\n")
            for word, idx in sorted(self.word_to_id.items(), key=lambda kv: kv[1]):
                fh.write(f"{word}\t{idx}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if len(header) != 2 or header[0] != VOCAB_FORMAT:
                raise ValueError(f"{path}: not a vocabulary file")
            if int(header[1]) != VOCAB_VERSION:
                raise ValueError(f"{path}: unsupported vocabulary version {header[1]}")
            word_to_id = {}
            for line in fh:
                word, idx = line.rstrip("\n").split("\t")
                word_to_id[word] = int(idx)
        return cls(word_to_id)


def build_vocab(corpus: Sequence[LabeledSentence], min_count: int = 1) -> Vocabulary:
    """Words with frequency >= min_count, ordered by frequency desc then
    lexicographically, after the reserved PAD/UNK entries."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter(token for s in corpus for token in s.tokens)
    words = sorted(
        (w for w, c in counts.items() if c >= min_count),
        key=lambda w: (-counts[w], w),
    )
    word_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for i, w in enumerate(words, start=2):
        word_to_id[w] = i
    return Vocabulary(word_to_id)
