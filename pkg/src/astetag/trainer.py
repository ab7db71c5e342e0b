"""Joint training of the tagging model.

The per-sentence objective is cross entropy summed over all n token tags
and all n*n pair cells (gold labels mirrored, diagonal N); a batch's loss
is the mean of its sentences' sums. Optimization follows the reference
regime: Adam (lr 5e-5, betas 0.9/0.999, eps 1e-8) with the global
gradient norm clipped to 1.0.

Sentences are forwarded one at a time with gradient accumulation, so
variable lengths never require padding.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import LabeledSentence, TagTargets, Vocabulary, encodable
from .decoder import decode_triplets
from .heads import FusedLogits
from .metrics import PRF, score
from .model import Ablation, TaggingModel, apply_ablation  # noqa: F401  (re-export)


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    grad_clip_norm: float = 1.0
    batch_size: int = 16
    epochs: int = 500
    seed: int = 0
    min_count: int = 1
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.grad_clip_norm <= 0:
            raise ValueError(f"grad_clip_norm must be > 0, got {self.grad_clip_norm}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def loss(fused: FusedLogits, targets: TagTargets) -> torch.Tensor:
    """Cross entropy summed over the 1D sequence and the full 2D matrix."""
    n = targets.tags1d.shape[0]
    if tuple(fused.logits1d.shape) != (n, 3) or tuple(fused.logits2d.shape) != (n, n, 4):
        raise ValueError(
            f"logit shapes {tuple(fused.logits1d.shape)} / "
            f"{tuple(fused.logits2d.shape)} do not fit {n} tokens"
        )
    if not (torch.isfinite(fused.logits1d).all() and torch.isfinite(fused.logits2d).all()):
        raise ValueError("non-finite logits")
    device = fused.logits1d.device
    tags1d = torch.from_numpy(targets.tags1d).to(device)
    tags2d = torch.from_numpy(targets.tags2d).to(device)
    loss1d = F.cross_entropy(fused.logits1d, tags1d, reduction="sum")
    loss2d = F.cross_entropy(
        fused.logits2d.reshape(-1, 4), tags2d.reshape(-1), reduction="sum"
    )
    return loss1d + loss2d


@dataclass
class EpochRecord:
    epoch: int
    step: int
    loss: float
    dev_precision: float
    dev_recall: float
    dev_f1: float


@dataclass
class TrainResult:
    best_state: dict[str, torch.Tensor]
    best_f1: float
    best_epoch: int
    history: list[EpochRecord]


class Trainer:
    """Owns the optimizer state for one model/config pair."""

    def __init__(self, model: TaggingModel, config: TrainConfig):
        self.model = model
        self.config = config
        self.parameters = list(model.trainable_parameters())
        self.optimizer = torch.optim.Adam(
            self.parameters,
            lr=config.learning_rate,
            betas=(0.9, 0.999),
            eps=1e-8,
        )
        self.step = 0

    def train_step(self, batch: list[tuple[np.ndarray, TagTargets]]) -> float:
        """One optimizer update on a batch of (token id array, targets)."""
        if not batch:
            raise ValueError("empty batch")
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        total = 0.0
        for token_ids, targets in batch:
            try:
                fused = self.model(torch.from_numpy(token_ids))
                sentence_loss = loss(fused, targets)
            except ValueError as exc:
                if "non-finite" in str(exc):
                    raise NumericError(f"{exc} at step {self.step}; aborting")
                raise
            (sentence_loss / len(batch)).backward()
            total += float(sentence_loss.detach())
        mean_loss = total / len(batch)
        if not math.isfinite(mean_loss):
            raise NumericError(
                f"non-finite loss {mean_loss} at step {self.step}; aborting"
            )
        torch.nn.utils.clip_grad_norm_(self.parameters, self.config.grad_clip_norm)
        self.optimizer.step()
        self.step += 1
        return mean_loss


def predict_sentence(model: TaggingModel, vocab: Vocabulary,
                     tokens: list[str] | tuple[str, ...]):
    """Decode one sentence's triplets with the model in inference mode."""
    model.eval()
    with torch.no_grad():
        fused = model(torch.from_numpy(vocab.encode(tokens)))
    return decode_triplets(*fused.as_numpy())


def evaluate(model: TaggingModel, vocab: Vocabulary,
             sentences: list[LabeledSentence]) -> tuple[list, PRF]:
    """Predict every sentence and score against its gold triplets."""
    predictions = [predict_sentence(model, vocab, s.tokens) for s in sentences]
    gold = [s.triplets for s in sentences]
    return predictions, score(predictions, gold)


def train(
    model: TaggingModel,
    vocab: Vocabulary,
    train_sentences: list[LabeledSentence],
    dev_sentences: list[LabeledSentence],
    config: TrainConfig,
    log=None,
) -> TrainResult:
    """Full training loop; keeps the state with the best dev triplet F1
    (earliest epoch wins ties).

    Conflicting or over-long training sentences are dropped with a warning;
    dev sentences are used as-is for decoding and scoring.
    """
    pairs = encodable(train_sentences, n_max=model.config.max_len)
    if not pairs:
        raise ValueError("no trainable sentences after filtering")
    examples = [(vocab.encode(s.tokens), targets) for s, targets in pairs]

    rng = random.Random(config.seed)
    best_f1 = -1.0
    best_epoch = 0
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    history: list[EpochRecord] = []
    trainer = Trainer(model, config)

    for epoch in range(1, config.epochs + 1):
        order = list(range(len(examples)))
        rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            epoch_loss += trainer.train_step(batch)
            n_batches += 1
        _, dev_prf = evaluate(model, vocab, dev_sentences)
        record = EpochRecord(
            epoch=epoch,
            step=trainer.step,
            loss=epoch_loss / max(n_batches, 1),
            dev_precision=dev_prf.precision,
            dev_recall=dev_prf.recall,
            dev_f1=dev_prf.f1,
        )
        history.append(record)
        if log is not None:
            log(record)
        if dev_prf.f1 > best_f1:
            best_f1 = dev_prf.f1
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return TrainResult(
        best_state=best_state, best_f1=best_f1, best_epoch=best_epoch, history=history
    )
