"""The four tagging branches and their late fusion.

1D surface (per-token tags over {A, O, N}):
  * an affine map over the token representations, and
  * an affine map over the diagonal of the refined attention tensor
    (the channels relating each token to itself).

2D surface (per-pair tags over {Pos, Neu, Neg, N}):
  * one query/key scoring head per class over the token representations,
    with rotary rotations making the pair score depend on positions only
    through their offset (no 1/sqrt(d) scaling, raw dot product), and
  * a per-cell affine map over the refined attention channels.

Fusion is an elementwise sum of whichever branches are enabled; each
surface must keep at least one branch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .encoder import INIT_STD

ROTARY_BASE = 10000.0

N_TAGS_1D = 3
N_TAGS_2D = 4


@dataclass
class FusedLogits:
    logits1d: torch.Tensor  # (n, 3)
    logits2d: torch.Tensor  # (n, n, 4)

    def as_numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.logits1d.detach().cpu().numpy(),
            self.logits2d.detach().cpu().numpy(),
        )


def rotate_pairs(x: torch.Tensor, positions: torch.Tensor,
                 inv_freq: torch.Tensor) -> torch.Tensor:
    """Rotate consecutive feature pairs of ``x`` (..., n, d) by the angles
    position * inv_freq, the standard rotary construction."""
    angles = positions[:, None].to(inv_freq.dtype) * inv_freq[None, :]  # (n, d/2)
    cos, sin = torch.cos(angles), torch.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    rotated_even = even * cos - odd * sin
    rotated_odd = even * sin + odd * cos
    return torch.stack((rotated_even, rotated_odd), dim=-1).flatten(-2)


class TaggingHeads(nn.Module):
    def __init__(self, width: int, attention_channels: int):
        super().__init__()
        if width % 2 != 0:
            raise ValueError(
                f"rotary rotations need an even width, got {width}"
            )
        self.width = width
        self.attention_channels = attention_channels
        self.token_to_1d = nn.Linear(width, N_TAGS_1D)
        self.attention_to_1d = nn.Linear(attention_channels, N_TAGS_1D)
        self.attention_to_2d = nn.Linear(attention_channels, N_TAGS_2D)
        # one query/key scoring head per 2D class
        self.query_weight = nn.Parameter(torch.empty(N_TAGS_2D, width, width))
        self.query_bias = nn.Parameter(torch.zeros(N_TAGS_2D, width))
        self.key_weight = nn.Parameter(torch.empty(N_TAGS_2D, width, width))
        self.key_bias = nn.Parameter(torch.zeros(N_TAGS_2D, width))
        for w in (self.token_to_1d.weight, self.attention_to_1d.weight,
                  self.attention_to_2d.weight, self.query_weight, self.key_weight):
            nn.init.trunc_normal_(w, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        for b in (self.token_to_1d.bias, self.attention_to_1d.bias,
                  self.attention_to_2d.bias):
            nn.init.zeros_(b)
        inv_freq = ROTARY_BASE ** (
            -torch.arange(0, width, 2, dtype=torch.float32) / width
        )
        self.register_buffer("inv_freq", inv_freq)

    def tag1d_from_tokens(self, hidden: torch.Tensor) -> torch.Tensor:
        """(n, width) token representations -> (n, 3) tag logits."""
        if hidden.dim() != 2 or hidden.shape[1] != self.width:
            raise ValueError(f"expected (n, {self.width}) hidden states")
        return self.token_to_1d(hidden)

    def tag1d_from_attention(self, attention: torch.Tensor) -> torch.Tensor:
        """(channels, n, n) refined attention -> (n, 3) logits from the
        diagonal cells only."""
        self._check_attention(attention)
        diagonal = torch.diagonal(attention, dim1=1, dim2=2).transpose(0, 1)  # (n, ch)
        return self.attention_to_1d(diagonal)

    def tag2d_from_tokens(self, hidden: torch.Tensor,
                          use_rotary: bool = True) -> torch.Tensor:
        """(n, width) token representations -> (n, n, 4) pair logits via the
        per-class query/key heads."""
        if hidden.dim() != 2 or hidden.shape[1] != self.width:
            raise ValueError(f"expected (n, {self.width}) hidden states")
        n = hidden.shape[0]
        queries = torch.einsum("nd,tde->tne", hidden, self.query_weight)
        queries = queries + self.query_bias[:, None, :]
        keys = torch.einsum("nd,tde->tne", hidden, self.key_weight)
        keys = keys + self.key_bias[:, None, :]
        if use_rotary:
            positions = torch.arange(n, device=hidden.device)
            queries = rotate_pairs(queries, positions, self.inv_freq)
            keys = rotate_pairs(keys, positions, self.inv_freq)
        return torch.einsum("tie,tje->ijt", queries, keys)

    def tag2d_from_attention(self, attention: torch.Tensor) -> torch.Tensor:
        """(channels, n, n) refined attention -> (n, n, 4) logits, one affine
        map over the channel axis per cell."""
        self._check_attention(attention)
        return self.attention_to_2d(attention.permute(1, 2, 0))

    def _check_attention(self, attention: torch.Tensor) -> None:
        if (
            attention.dim() != 3
            or attention.shape[0] != self.attention_channels
            or attention.shape[1] != attention.shape[2]
        ):
            raise ValueError(
                f"expected ({self.attention_channels}, n, n) attention tensor, "
                f"got {tuple(attention.shape)}"
            )


def fuse(branches_1d: Sequence[torch.Tensor],
         branches_2d: Sequence[torch.Tensor]) -> FusedLogits:
    """Sum the enabled branch logits per surface."""
    if not branches_1d or not branches_2d:
        raise ValueError("each tagging surface needs at least one enabled branch")
    for t in branches_1d[1:]:
        if t.shape != branches_1d[0].shape:
            raise ValueError("1D branch shapes disagree")
    for t in branches_2d[1:]:
        if t.shape != branches_2d[0].shape:
            raise ValueError("2D branch shapes disagree")
    logits1d = branches_1d[0]
    for t in branches_1d[1:]:
        logits1d = logits1d + t
    logits2d = branches_2d[0]
    for t in branches_2d[1:]:
        logits2d = logits2d + t
    return FusedLogits(logits1d=logits1d, logits2d=logits2d)
