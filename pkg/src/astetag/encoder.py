"""Micro bidirectional transformer encoder.

Besides the final token representations, every layer's post-softmax
attention probabilities (all heads, harvested before attention dropout)
are returned as a stacked (layers * heads, n, n) tensor so downstream
modules can treat them as token-pair features.

Trained from scratch over whole-word tokens: no pretrained weights, no
wordpieces, no CLS/SEP bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

INIT_STD = 0.02  # truncated normal, the usual convention for this family


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 2
    width: int = 32
    ffn_width: int = 64
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.vocab_size, self.layers, self.heads, self.width,
               self.ffn_width, self.max_len) < 1:
            raise ValueError("all encoder sizes must be >= 1")
        if self.width % self.heads != 0:
            raise ValueError(
                f"width {self.width} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class EncoderOutput:
    hidden: torch.Tensor     # (n, width)
    attention: torch.Tensor  # (layers * heads, n, n), rows sum to 1


def init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)


class EncoderLayer(nn.Module):
    """Post-LN transformer block; forward returns the new hidden states and
    the per-head attention probabilities (pre value mixing, pre dropout)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        d = config.width
        self.heads = config.heads
        self.head_dim = d // config.heads
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.output = nn.Linear(d, d)
        self.ffn_in = nn.Linear(d, config.ffn_width)
        self.ffn_out = nn.Linear(config.ffn_width, d)
        self.norm_attn = nn.LayerNorm(d)
        self.norm_ffn = nn.LayerNorm(d)
        self.attn_dropout = nn.Dropout(config.dropout)
        self.hidden_dropout = nn.Dropout(config.dropout)

    def forward(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if not torch.isfinite(hidden).all():
            raise ValueError("non-finite encoder layer input")
        n, d = hidden.shape
        shape = (n, self.heads, self.head_dim)
        q = self.query(hidden).view(shape).transpose(0, 1)  # (h, n, head_dim)
        k = self.key(hidden).view(shape).transpose(0, 1)
        v = self.value(hidden).view(shape).transpose(0, 1)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        probs = torch.softmax(scores, dim=-1)  # (h, n, n), harvested as-is
        context = self.attn_dropout(probs) @ v
        context = context.transpose(0, 1).reshape(n, d)
        hidden = self.norm_attn(hidden + self.hidden_dropout(self.output(context)))
        ffn = self.ffn_out(F.gelu(self.ffn_in(hidden)))
        hidden = self.norm_ffn(hidden + self.hidden_dropout(ffn))
        return hidden, probs


class TokenEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.word_embedding = nn.Embedding(config.vocab_size, config.width)
        self.position_embedding = nn.Embedding(config.max_len, config.width)
        self.layers = nn.ModuleList(
            EncoderLayer(config) for _ in range(config.layers)
        )
        self.apply(init_weights)

    def embed(self, token_ids: torch.Tensor) -> torch.Tensor:
        """Word embedding plus absolute position embedding, row per token."""
        token_ids = torch.as_tensor(token_ids, dtype=torch.long)
        n = token_ids.shape[0]
        if n > self.config.max_len:
            raise ValueError(
                f"sequence length {n} exceeds maximum {self.config.max_len}"
            )
        if n == 0:
            raise ValueError("empty token sequence")
        if int(token_ids.min()) < 0 or int(token_ids.max()) >= self.config.vocab_size:
            raise ValueError("token id out of vocabulary range")
        positions = torch.arange(n, device=token_ids.device)
        return self.word_embedding(token_ids) + self.position_embedding(positions)

    def encode(
        self,
        token_ids: torch.Tensor,
        mask_layers: frozenset[int] = frozenset(),
    ) -> EncoderOutput:
        """Run all layers; stack every layer's heads along the channel axis
        (layer-major, head order within a layer). `mask_layers` holds 1-based
        layer indices whose attention channels are zeroed in the stack."""
        config = self.config
        for layer_index in mask_layers:
            if not 1 <= layer_index <= config.layers:
                raise ValueError(
                    f"mask layer {layer_index} outside 1..{config.layers}"
                )
        hidden = self.embed(token_ids)
        per_layer = []
        for layer in self.layers:
            hidden, probs = layer(hidden)
            per_layer.append(probs)
        stack = torch.cat(per_layer, dim=0)  # (layers * heads, n, n)
        if mask_layers:
            keep = torch.ones(config.layers, dtype=stack.dtype, device=stack.device)
            for layer_index in mask_layers:
                keep[layer_index - 1] = 0.0
            keep = keep.repeat_interleave(config.heads)
            stack = stack * keep[:, None, None]
        return EncoderOutput(hidden=hidden, attention=stack)

    def forward(
        self,
        token_ids: torch.Tensor,
        mask_layers: frozenset[int] = frozenset(),
    ) -> EncoderOutput:
        return self.encode(token_ids, mask_layers=mask_layers)
