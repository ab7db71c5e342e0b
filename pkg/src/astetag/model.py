"""The composed tagging model: encoder -> attention refiner -> four
branches -> fused logits, with every ablation realized as a runtime switch
over shared weights."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator

import torch
from torch import nn

from .encoder import EncoderConfig, TokenEncoder
from .heads import FusedLogits, TaggingHeads, fuse
from .refiner import AttentionRefiner

BRANCH_SWITCHES = (
    "no_token_branch_1d",
    "no_token_branch_2d",
    "no_attn_branch_1d",
    "no_attn_branch_2d",
    "no_conv",
    "no_relpos",
    "no_rotary",
)


@dataclass(frozen=True)
class Ablation:
    """Which branches / feature channels to disable. Disabled parts are left
    out of the forward pass entirely, so their parameters receive no
    gradients and no statistics updates."""

    no_token_branch_1d: bool = False
    no_token_branch_2d: bool = False
    no_attn_branch_1d: bool = False
    no_attn_branch_2d: bool = False
    no_conv: bool = False
    no_relpos: bool = False
    no_rotary: bool = False
    mask_layers: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "mask_layers", frozenset(self.mask_layers))
        if self.no_token_branch_1d and self.no_attn_branch_1d:
            raise ValueError("every 1D branch disabled; one must survive")
        if self.no_token_branch_2d and self.no_attn_branch_2d:
            raise ValueError("every 2D branch disabled; one must survive")

    @property
    def uses_refiner(self) -> bool:
        return not (self.no_attn_branch_1d and self.no_attn_branch_2d)

    def describe(self) -> str:
        parts = [f.name.replace("_", "-") for f in fields(self)
                 if f.name in BRANCH_SWITCHES and getattr(self, f.name)]
        if self.mask_layers:
            parts.append("mask-layers=" + ",".join(map(str, sorted(self.mask_layers))))
        return " ".join(parts) if parts else "full"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 2
    width: int = 32
    ffn_width: int = 64
    relpos_dim: int = 8
    conv_blocks: int = 2
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        # delegate most validation to the encoder config
        self.encoder_config()
        if self.relpos_dim < 0 or self.conv_blocks < 0:
            raise ValueError("relpos_dim and conv_blocks must be >= 0")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=self.vocab_size,
            layers=self.layers,
            heads=self.heads,
            width=self.width,
            ffn_width=self.ffn_width,
            max_len=self.max_len,
            dropout=self.dropout,
        )

    @property
    def attention_channels(self) -> int:
        return self.layers * self.heads + self.relpos_dim


class TaggingModel(nn.Module):
    def __init__(self, config: ModelConfig, ablation: Ablation | None = None,
                 *, _shared: tuple[TokenEncoder, AttentionRefiner, TaggingHeads] | None = None):
        super().__init__()
        self.config = config
        self.ablation = ablation if ablation is not None else Ablation()
        self._validate_ablation(self.ablation)
        if _shared is None:
            self.encoder = TokenEncoder(config.encoder_config())
            self.refiner = AttentionRefiner(
                attention_channels=config.layers * config.heads,
                relpos_dim=config.relpos_dim,
                max_len=config.max_len,
                conv_blocks=config.conv_blocks,
            )
            self.heads = TaggingHeads(config.width, config.attention_channels)
        else:
            self.encoder, self.refiner, self.heads = _shared

    def _validate_ablation(self, ablation: Ablation) -> None:
        for layer_index in ablation.mask_layers:
            if not 1 <= layer_index <= self.config.layers:
                raise ValueError(
                    f"mask layer {layer_index} outside 1..{self.config.layers}"
                )

    def forward(self, token_ids: torch.Tensor) -> FusedLogits:
        ablation = self.ablation
        encoded = self.encoder.encode(token_ids, mask_layers=ablation.mask_layers)
        branches_1d = []
        branches_2d = []
        if not ablation.no_token_branch_1d:
            branches_1d.append(self.heads.tag1d_from_tokens(encoded.hidden))
        if not ablation.no_token_branch_2d:
            branches_2d.append(
                self.heads.tag2d_from_tokens(
                    encoded.hidden, use_rotary=not ablation.no_rotary
                )
            )
        if ablation.uses_refiner:
            refined = self.refiner(
                encoded.attention,
                use_relpos=not ablation.no_relpos,
                use_conv=not ablation.no_conv,
            )
            if not ablation.no_attn_branch_1d:
                branches_1d.append(self.heads.tag1d_from_attention(refined))
            if not ablation.no_attn_branch_2d:
                branches_2d.append(self.heads.tag2d_from_attention(refined))
        return fuse(branches_1d, branches_2d)

    def trainable_parameters(self) -> Iterator[nn.Parameter]:
        """Parameters of the components the current ablation actually uses;
        everything else stays outside the optimizer and gradient graph."""
        ablation = self.ablation
        yield from self.encoder.parameters()
        if ablation.uses_refiner:
            if not ablation.no_relpos:
                yield self.refiner.relpos_table
            if not ablation.no_conv:
                yield from self.refiner.blocks.parameters()
        if not ablation.no_token_branch_1d:
            yield from self.heads.token_to_1d.parameters()
        if not ablation.no_token_branch_2d:
            yield self.heads.query_weight
            yield self.heads.query_bias
            yield self.heads.key_weight
            yield self.heads.key_bias
        if not ablation.no_attn_branch_1d:
            yield from self.heads.attention_to_1d.parameters()
        if not ablation.no_attn_branch_2d:
            yield from self.heads.attention_to_2d.parameters()


def apply_ablation(model: TaggingModel, ablation: Ablation) -> TaggingModel:
    """A view of the model with different switches; all weights are shared
    with the original, nothing is copied."""
    return TaggingModel(
        model.config,
        ablation,
        _shared=(model.encoder, model.refiner, model.heads),
    )


def build_model(config: ModelConfig, ablation: Ablation | None = None,
                seed: int | None = None) -> TaggingModel:
    """Construct a freshly initialized model, optionally seeding torch first
    so initialization is reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return TaggingModel(config, ablation)
