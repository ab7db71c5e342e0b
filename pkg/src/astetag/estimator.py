"""Scikit-learn style wrapper around the tagging pipeline.

`TripletExtractor` follows the estimator protocol (`fit` / `predict` /
`score`, `get_params` / `set_params` via `BaseEstimator`), so it clones,
composes with model-selection utilities, and validates its inputs like
any other estimator. `X` is a list of tokenized sentences; labels may be
given either as `y` (one triplet collection per sentence) or by passing
`LabeledSentence` objects directly.
"""

from __future__ import annotations

import logging
from typing import Collection, Sequence

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import LabeledSentence, Triplet, Vocabulary, build_vocab
from .metrics import score as micro_score
from .model import Ablation, ModelConfig, TaggingModel
from .trainer import TrainConfig, predict_sentence, train

logger = logging.getLogger(__name__)


def _as_labeled_sentences(X, y) -> list[LabeledSentence]:
    if y is None:
        sentences = []
        for i, item in enumerate(X):
            if not isinstance(item, LabeledSentence):
                raise ValueError(
                    f"X[{i}] is not a LabeledSentence; pass gold triplets as y "
                    "when X holds raw token sequences"
                )
            sentences.append(item)
        return sentences
    if len(X) != len(y):
        raise ValueError(f"X and y lengths differ: {len(X)} vs {len(y)}")
    sentences = []
    for i, (tokens, triplets) in enumerate(zip(X, y)):
        tokens = _check_tokens(tokens, i)
        sentences.append(LabeledSentence(tokens, frozenset(triplets)))
    return sentences


def _check_tokens(tokens, index: int) -> tuple[str, ...]:
    if isinstance(tokens, LabeledSentence):
        return tokens.tokens
    if isinstance(tokens, str) or not isinstance(tokens, Sequence):
        raise ValueError(
            f"X[{index}] must be a sequence of token strings, got {type(tokens).__name__}"
        )
    toks = tuple(tokens)
    if not toks or not all(isinstance(t, str) for t in toks):
        raise ValueError(f"X[{index}] must be a nonempty sequence of strings")
    return toks


class TripletExtractor(BaseEstimator):
    """Trainable extractor of (aspect span, opinion span, sentiment) triplets.

    Parameters mirror the model and training configuration; they are stored
    untouched until :meth:`fit`, per the estimator contract. Model selection
    keeps the epoch with the best triplet F1 on the training sentences.
    """

    def __init__(
        self,
        layers: int = 2,
        heads: int = 2,
        width: int = 32,
        ffn_width: int = 64,
        relpos_dim: int = 8,
        conv_blocks: int = 2,
        max_len: int = 64,
        dropout: float = 0.1,
        learning_rate: float = 5e-5,
        grad_clip_norm: float = 1.0,
        batch_size: int = 16,
        epochs: int = 500,
        seed: int = 0,
        min_count: int = 1,
        ablation: Ablation | None = None,
        verbose: bool = False,
    ):
        self.layers = layers
        self.heads = heads
        self.width = width
        self.ffn_width = ffn_width
        self.relpos_dim = relpos_dim
        self.conv_blocks = conv_blocks
        self.max_len = max_len
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.grad_clip_norm = grad_clip_norm
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.min_count = min_count
        self.ablation = ablation
        self.verbose = verbose

    def fit(self, X, y=None):
        sentences = _as_labeled_sentences(X, y)
        if not sentences:
            raise ValueError("cannot fit on an empty corpus")
        train_config = TrainConfig(
            learning_rate=self.learning_rate,
            grad_clip_norm=self.grad_clip_norm,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            min_count=self.min_count,
            ablation=self.ablation if self.ablation is not None else Ablation(),
        )
        vocab = build_vocab(sentences, min_count=self.min_count)
        torch.manual_seed(self.seed)
        model = TaggingModel(
            ModelConfig(
                vocab_size=len(vocab),
                layers=self.layers,
                heads=self.heads,
                width=self.width,
                ffn_width=self.ffn_width,
                relpos_dim=self.relpos_dim,
                conv_blocks=self.conv_blocks,
                max_len=self.max_len,
                dropout=self.dropout,
            ),
            train_config.ablation,
        )
        log = (lambda r: logger.info(
            "epoch %d loss %.4f train F1 %.4f", r.epoch, r.loss, r.dev_f1
        )) if self.verbose else None
        result = train(model, vocab, sentences, sentences, train_config, log=log)
        model.load_state_dict(result.best_state)
        self.vocab_: Vocabulary = vocab
        self.model_: TaggingModel = model
        self.best_f1_ = result.best_f1
        self.best_epoch_ = result.best_epoch
        self.history_ = result.history
        return self

    def predict(self, X) -> list[frozenset[Triplet]]:
        self._check_fitted()
        predictions = []
        for i, tokens in enumerate(X):
            toks = _check_tokens(tokens, i)
            if len(toks) > self.max_len:
                logger.warning(
                    "sentence %d has %d tokens (limit %d); predicting nothing",
                    i, len(toks), self.max_len,
                )
                predictions.append(frozenset())
                continue
            predictions.append(predict_sentence(self.model_, self.vocab_, toks))
        return predictions

    def score(self, X, y=None) -> float:
        """Micro-averaged exact-match triplet F1."""
        sentences = _as_labeled_sentences(X, y)
        predictions = self.predict([s.tokens for s in sentences])
        return micro_score(predictions, [s.triplets for s in sentences]).f1

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This TripletExtractor instance is not fitted yet; call fit first."
            )
