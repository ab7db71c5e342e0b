"""Refinement of the stacked attention tensor.

Learnable relative-position channels are concatenated onto the raw
attention stack, then a fixed number of 3x3 convolution blocks
(convolution, ReLU, batch normalization, channels preserved) distill the
token-pair features. With zero blocks the output is the raw
concatenation.
"""

from __future__ import annotations

import torch
from torch import nn

from .encoder import INIT_STD


class ConvBlock(nn.Module):
    """3x3 same-shape convolution, ReLU, then batch norm (momentum 0.1)."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.norm = nn.BatchNorm2d(channels, momentum=0.1)
        nn.init.trunc_normal_(self.conv.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(torch.relu(self.conv(x)))


class AttentionRefiner(nn.Module):
    """Maps an (attention channels, n, n) stack to a refined
    (attention channels + relpos_dim, n, n) feature tensor."""

    def __init__(self, attention_channels: int, relpos_dim: int, max_len: int,
                 conv_blocks: int):
        super().__init__()
        if attention_channels < 1 or relpos_dim < 0 or conv_blocks < 0:
            raise ValueError("non-sensical refiner sizes")
        self.attention_channels = attention_channels
        self.relpos_dim = relpos_dim
        self.max_len = max_len
        self.relpos_table = nn.Parameter(torch.empty(relpos_dim, 2 * max_len - 1))
        nn.init.trunc_normal_(self.relpos_table, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        self.blocks = nn.ModuleList(
            ConvBlock(attention_channels + relpos_dim) for _ in range(conv_blocks)
        )

    @property
    def out_channels(self) -> int:
        return self.attention_channels + self.relpos_dim

    def materialize_relpos(self, n: int) -> torch.Tensor:
        """Per-sentence relative-position tensor: cell (i, j) carries the
        table column for offset i - j, so it is constant along diagonals."""
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds maximum {self.max_len}")
        positions = torch.arange(n, device=self.relpos_table.device)
        offsets = positions[:, None] - positions[None, :] + self.max_len - 1
        offsets = offsets.clamp(0, 2 * self.max_len - 2)
        return self.relpos_table[:, offsets]  # (relpos_dim, n, n)

    def refine(self, attention: torch.Tensor, relpos: torch.Tensor,
               use_conv: bool = True) -> torch.Tensor:
        """Concatenate the relative-position channels and run the blocks;
        with `use_conv` off (or zero blocks) the raw concatenation comes back."""
        if attention.dim() != 3 or attention.shape[0] != self.attention_channels:
            raise ValueError(
                f"expected ({self.attention_channels}, n, n) attention stack, "
                f"got {tuple(attention.shape)}"
            )
        n = attention.shape[-1]
        if relpos.shape != (self.relpos_dim, n, n):
            raise ValueError(
                f"relative-position tensor {tuple(relpos.shape)} does not match "
                f"({self.relpos_dim}, {n}, {n})"
            )
        x = torch.cat([attention, relpos], dim=0)
        if use_conv and self.blocks:
            x = x.unsqueeze(0)
            for block in self.blocks:
                x = block(x)
            x = x.squeeze(0)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite refiner activations")
        return x

    def forward(self, attention: torch.Tensor, use_relpos: bool = True,
                use_conv: bool = True) -> torch.Tensor:
        """Refine an attention stack; the flags realize the position-channel
        and convolution ablations (zeroed channels / skipped blocks) without
        touching parameter shapes."""
        n = attention.shape[-1]
        if use_relpos:
            relpos = self.materialize_relpos(n)
        else:
            relpos = torch.zeros(
                self.relpos_dim, n, n,
                dtype=attention.dtype, device=attention.device,
            )
        return self.refine(attention, relpos, use_conv=use_conv)
