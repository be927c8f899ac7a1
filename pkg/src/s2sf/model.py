"""Sequence-to-sequence denoiser: per-frame ResNet stem, full spatio-temporal
self-attention middle, FiLM conditioning on per-frame noise level and camera
pose. Per-pixel pose embeddings (plucker / ray) additionally enter as input
channels; their pooled projection still feeds FiLM so every mode conditions
the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError
from .geometry import embedding_channels


@dataclass(frozen=True)
class DenoiserConfig:
    H: int = 32
    W: int = 32
    C: int = 3
    max_frames: int = 27
    patch: int = 4
    width: int = 64
    depth_conv: int = 1
    depth_attn: int = 2
    heads: int = 4
    cond_dim: int = 128
    embed_mode: str = "plucker"

    def __post_init__(self):
        if self.H % self.patch or self.W % self.patch:
            raise ValueError(f"H, W must be divisible by patch, got {self.H}x{self.W} / {self.patch}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_embedding(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Standard transformer timestep embedding of a (...,) tensor -> (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=x.dtype, device=x.device) / half)
    args = x[..., None].to(freqs.dtype) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class FiLM(nn.Module):
    """h <- h * (1 + gamma(c)) + beta(c), zero-initialized (identity at init)."""

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(cond_dim, 2 * channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.proj(cond).chunk(2, dim=-1)
        if h.dim() == 4:  # (B*N, C, H, W) conv features
            gamma = gamma[..., None, None]
            beta = beta[..., None, None]
        return h * (1.0 + gamma) + beta


class ResBlock(nn.Module):
    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, channels)
        self.film1 = FiLM(cond_dim, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(8, channels)
        self.film2 = FiLM(cond_dim, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, h, cond):
        r = h
        h = self.conv1(F.silu(self.film1(self.norm1(h), cond)))
        h = self.conv2(F.silu(self.film2(self.norm2(h), cond)))
        return r + h


class AttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int, cond_dim: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(width)
        self.film1 = FiLM(cond_dim, width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.film2 = FiLM(cond_dim, width)
        self.mlp = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x, cond):
        # x: (B, L, W); cond: (B, L, cond_dim) already broadcast per token
        B, L, W = x.shape
        q, k, v = self.qkv(self.film1(self.norm1(x), cond)).chunk(3, dim=-1)
        q = q.view(B, L, self.heads, -1).transpose(1, 2)
        k = k.view(B, L, self.heads, -1).transpose(1, 2)
        v = v.view(B, L, self.heads, -1).transpose(1, 2)
        a = F.scaled_dot_product_attention(q, k, v).transpose(1, 2).reshape(B, L, W)
        x = x + self.proj(a)
        x = x + self.mlp(self.film2(self.norm2(x), cond))
        return x


class SeqDenoiser(nn.Module):
    """Predicts per-frame noise for a corrupted frame sequence."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        c = config
        self.pixel_channels = embedding_channels(c.embed_mode)
        in_ch = c.C + self.pixel_channels
        self.stem = nn.Conv2d(in_ch, c.width, 3, padding=1)
        self.conv_blocks = nn.ModuleList(ResBlock(c.width, c.cond_dim) for _ in range(c.depth_conv))
        self.patchify = nn.Conv2d(c.width, c.width, c.patch, stride=c.patch)
        gh, gw = c.H // c.patch, c.W // c.patch
        self.grid = (gh, gw)
        self.frame_emb = nn.Parameter(torch.randn(c.max_frames, c.width) * 0.02)
        self.row_emb = nn.Parameter(torch.randn(gh, c.width) * 0.02)
        self.col_emb = nn.Parameter(torch.randn(gw, c.width) * 0.02)
        self.attn_blocks = nn.ModuleList(AttentionBlock(c.width, c.heads, c.cond_dim) for _ in range(c.depth_attn))
        self.cond_mlp = nn.Sequential(nn.Linear(c.cond_dim, c.cond_dim), nn.SiLU(), nn.Linear(c.cond_dim, c.cond_dim))
        pose_in = 16 if c.embed_mode == "global" else self.pixel_channels
        self.pose_proj = nn.Linear(pose_in, c.cond_dim)
        self.out_norm = nn.LayerNorm(c.width)
        self.head = nn.Linear(c.width, c.patch * c.patch * c.C)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(
        self,
        frames: torch.Tensor,  # (B, N, C, H, W)
        levels: torch.Tensor,  # (B, N) noise level per frame
        pose: torch.Tensor,  # global: (B, N, 16); per-pixel: (B, N, E, H, W)
        frame_positions: torch.Tensor | None = None,  # (N,) position ids, default arange
    ) -> torch.Tensor:
        c = self.config
        if frames.dim() != 5 or frames.shape[2:] != (c.C, c.H, c.W):
            raise ShapeError(f"expected frames (B, N, {c.C}, {c.H}, {c.W}), got {tuple(frames.shape)}")
        B, N = frames.shape[:2]
        if N > c.max_frames:
            raise ShapeError(f"{N} frames exceeds max_frames={c.max_frames}")
        if levels.shape != (B, N):
            raise ShapeError(f"levels must be (B, N), got {tuple(levels.shape)}")
        if frame_positions is None:
            frame_positions = torch.arange(N, device=frames.device)

        # per-frame conditioning vector: noise level + pose summary
        cond = sinusoidal_embedding(levels.float(), c.cond_dim).to(frames.dtype)
        if c.embed_mode == "global":
            pose_summary = pose
        else:
            if pose.shape != (B, N, self.pixel_channels, c.H, c.W):
                raise ShapeError(f"expected pose (B, N, {self.pixel_channels}, {c.H}, {c.W}), got {tuple(pose.shape)}")
            pose_summary = pose.mean(dim=(-2, -1))
        cond = self.cond_mlp(cond + self.pose_proj(pose_summary))  # (B, N, D)
        cond_flat = cond.reshape(B * N, -1)

        x = frames
        if c.embed_mode != "global":
            x = torch.cat([x, pose], dim=2)
        h = self.stem(x.reshape(B * N, -1, c.H, c.W))
        for blk in self.conv_blocks:
            h = blk(h, cond_flat)
        h = self.patchify(h)  # (B*N, width, gh, gw)
        gh, gw = self.grid
        tok = h.flatten(2).transpose(1, 2).reshape(B, N, gh * gw, -1)
        pos = (self.row_emb[:, None, :] + self.col_emb[None, :, :]).reshape(1, 1, gh * gw, -1)
        tok = tok + pos + self.frame_emb[frame_positions][None, :, None, :]
        tok = tok.reshape(B, N * gh * gw, -1)
        cond_tok = cond[:, :, None, :].expand(B, N, gh * gw, -1).reshape(B, N * gh * gw, -1)
        for blk in self.attn_blocks:
            tok = blk(tok, cond_tok)
        out = self.head(self.out_norm(tok))  # (B, N*P, patch*patch*C)
        out = out.reshape(B, N, gh, gw, c.patch, c.patch, c.C)
        out = out.permute(0, 1, 6, 2, 4, 3, 5).reshape(B, N, c.C, c.H, c.W)
        return out


def count_parameters(config: DenoiserConfig) -> int:
    """Exact learnable-scalar count for a config."""
    model = SeqDenoiser(config)
    return sum(p.numel() for p in model.parameters())
