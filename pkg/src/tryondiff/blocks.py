"""Shared neural building blocks: gated convolution, pyramid encoders,
residual attention, cross-attention conditioning, time embeddings."""

from __future__ import annotations

import math
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F


class GatedConv2d(nn.Module):
    """Convolution whose output is modulated by a learned sigmoid gate.

    Two parallel convolutions of the same input produce a feature map and
    a gating map; the result is LeakyReLU(feature) * sigmoid(gating), so
    the gate stays in (0, 1) elementwise.
    """

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        negative_slope: float = 0.2,
        bias: bool = True,
    ):
        super().__init__()
        if not 0.0 < negative_slope < 1.0:
            raise ValueError(f"negative_slope must be in (0, 1), got {negative_slope}")
        self.feature = nn.Conv2d(in_ch, out_ch, kernel_size, stride, padding, bias=bias)
        self.gating = nn.Conv2d(in_ch, out_ch, kernel_size, stride, padding, bias=bias)
        self.negative_slope = negative_slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.feature.in_channels:
            raise ValueError(
                f"expected {self.feature.in_channels} input channels, got {x.shape[1]}"
            )
        feat = F.leaky_relu(self.feature(x), self.negative_slope)
        gate = torch.sigmoid(self.gating(x))
        return feat * gate


class PyramidEncoder(nn.Module):
    """Stack of strided conv stages emitting one feature map per stage.

    Stage 0 keeps the input resolution; every later stage halves it, so a
    4-level encoder on a 64x64 input yields maps at 64, 32, 16 and 8.
    """

    def __init__(self, in_ch: int, widths: List[int], negative_slope: float = 0.2):
        super().__init__()
        if not widths:
            raise ValueError("need at least one pyramid level")
        stages = []
        prev = in_ch
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, w, 3, stride, 1),
                    nn.LeakyReLU(negative_slope),
                    nn.Conv2d(w, w, 3, 1, 1),
                    nn.LeakyReLU(negative_slope),
                )
            )
            prev = w
        self.stages = nn.ModuleList(stages)

    @property
    def levels(self) -> int:
        return len(self.stages)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        h, w = x.shape[-2:]
        div = 2 ** (self.levels - 1)
        if h % div or w % div:
            raise ValueError(
                f"spatial dims ({h}, {w}) must be divisible by {div} for {self.levels} levels"
            )
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ResidualAttentionBlock(nn.Module):
    """Pre-norm single-head self-attention + feed-forward, both residual.

    Operates on token sequences (B, N, d) and preserves their shape. With
    all projection and feed-forward weights at zero the block is the
    identity.
    """

    def __init__(self, d: int, ff_mult: int = 2):
        super().__init__()
        self.d = d
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.proj = nn.Linear(d, d, bias=False)
        self.ff = nn.Sequential(
            nn.Linear(d, ff_mult * d),
            nn.ReLU(),
            nn.Linear(ff_mult * d, d),
        )

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.d:
            raise ValueError(f"token dim {tokens.shape[-1]} != block dim {self.d}")
        h = self.ln1(tokens)
        q, k, v = self.q(h), self.k(h), self.v(h)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.d), dim=-1)
        tokens = tokens + self.proj(attn @ v)
        tokens = tokens + self.ff(self.ln2(tokens))
        return tokens


class CrossAttentionInject(nn.Module):
    """Residual cross-attention from spatial features to a condition vector.

    The (B, C, H, W) feature map attends to the condition embedding
    (B, d_cond) treated as a single key/value token; the attended value is
    projected to a feature-wise scale and shift. The multiplicative path
    makes the conditioning hard for the downstream network to ignore.
    Zeroing ``proj`` reduces the block to the identity.
    """

    def __init__(self, channels: int, d_cond: int):
        super().__init__()
        self.q = nn.Linear(channels, channels, bias=False)
        self.k = nn.Linear(d_cond, channels, bias=False)
        self.v = nn.Linear(d_cond, channels, bias=False)
        self.proj = nn.Linear(channels, 2 * channels, bias=False)
        self.norm = nn.GroupNorm(1, channels)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)  # (B, HW, C)
        q = self.q(tokens)
        k = self.k(cond).unsqueeze(1)  # (B, 1, C)
        v = self.v(cond).unsqueeze(1)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(c), dim=-1)
        scale, shift = self.proj(attn @ v).chunk(2, dim=-1)  # (B, HW, C) each
        scale = scale.transpose(1, 2).reshape(b, c, h, w)
        shift = shift.transpose(1, 2).reshape(b, c, h, w)
        return x * (1.0 + scale) + shift


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer steps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32) / half
    )
    args = t.float().unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def seeded_init(module: nn.Module, seed: int) -> nn.Module:
    """Re-initialize all conv/linear weights with seeded uniform fan-in scaling."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear, nn.ConvTranspose2d)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)
    return module
