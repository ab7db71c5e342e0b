"""Aspect sentiment triplet extraction with a micro transformer whose
attention maps double as token-pair features for 2D tagging."""

from .corpus import (
    LabeledSentence,
    ParseError,
    Sentiment,
    Span,
    TagConflictError,
    TagTargets,
    Triplet,
    Vocabulary,
    build_vocab,
    encode_tags,
    load_v2_file,
    parse_v2_line,
    serialize_v2_line,
)
from .decoder import assign_sentiment, decode_triplets, extract_spans, one_hot_logits
from .encoder import EncoderConfig, EncoderOutput, TokenEncoder
from .estimator import TripletExtractor
from .heads import FusedLogits, TaggingHeads, fuse
from .metrics import PRF, score, score_macro
from .model import Ablation, ModelConfig, TaggingModel, apply_ablation, build_model
from .refiner import AttentionRefiner
from .trainer import NumericError, TrainConfig, Trainer, evaluate, loss, predict_sentence, train

__version__ = "0.1.0"

__all__ = [
    "Ablation",
    "AttentionRefiner",
    "EncoderConfig",
    "EncoderOutput",
    "FusedLogits",
    "LabeledSentence",
    "ModelConfig",
    "NumericError",
    "PRF",
    "ParseError",
    "Sentiment",
    "Span",
    "TagConflictError",
    "TagTargets",
    "TaggingHeads",
    "TaggingModel",
    "TokenEncoder",
    "TrainConfig",
    "Trainer",
    "Triplet",
    "TripletExtractor",
    "Vocabulary",
    "apply_ablation",
    "assign_sentiment",
    "build_model",
    "build_vocab",
    "decode_triplets",
    "encode_tags",
    "evaluate",
    "extract_spans",
    "fuse",
    "load_v2_file",
    "loss",
    "one_hot_logits",
    "parse_v2_line",
    "predict_sentence",
    "score",
    "score_macro",
    "serialize_v2_line",
    "train",
]
