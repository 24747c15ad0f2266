"""Shared building blocks: noise embeddings, conv patchifier stacks, AdaLN transformers."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def noise_embedding(sigma: torch.Tensor | float, channels: int = 256) -> torch.Tensor:
    """Sinusoidal embedding of ``log(sigma) / 4``; half sin, half cos, geometric frequencies."""
    sigma = torch.as_tensor(sigma, dtype=torch.get_default_dtype())
    if not torch.all(sigma > 0):
        raise ValueError("noise embedding needs sigma > 0")
    x = torch.log(sigma) / 4
    half = channels // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=x.dtype) / half)
    arg = x[..., None] * freqs
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


def chunked_causal_mask(tokens_per_chunk: int, n_chunks: int) -> torch.Tensor:
    """Boolean ``[S, S]`` mask, True where a query may attend to a key.

    Tokens of chunk i see every token of chunks j <= i and nothing later.
    """
    if tokens_per_chunk < 1 or n_chunks < 1:
        raise ValueError("tokens_per_chunk and n_chunks must be >= 1")
    chunk = torch.arange(n_chunks).repeat_interleave(tokens_per_chunk)
    return chunk[:, None] >= chunk[None, :]


def _groups(ch: int) -> int:
    return math.gcd(32, ch)


class NoiseConditioner(nn.Module):
    """Maps sigma to the conditioning vector fed to every AdaLN layer."""

    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.channels = channels
        self.mlp = nn.Sequential(nn.Linear(channels, cond_dim), nn.SiLU(), nn.Linear(cond_dim, cond_dim))

    def forward(self, sigma: torch.Tensor) -> torch.Tensor:
        return self.mlp(noise_embedding(sigma, self.channels).to(self.mlp[0].weight.dtype))


class ResBlock(nn.Module):
    """Pre-activation residual conv block; the second norm is AdaLN-modulated when conditioned."""

    def __init__(self, ch: int, cond_dim: int | None = None):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(ch), ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(ch), ch, affine=cond_dim is None)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.mod = nn.Linear(cond_dim, 2 * ch) if cond_dim is not None else None

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.norm2(h)
        if self.mod is not None:
            if cond is None:
                raise ValueError("conditioned block called without noise conditioning")
            scale, shift = self.mod(cond)[:, :, None, None].chunk(2, dim=1)
            h = h * (1 + scale) + shift
        return x + self.conv2(F.silu(h))


class Patchifier(nn.Module):
    """Conv downsampling pyramid from a spectrogram chunk to a flat token sequence.

    ``channels`` and ``layers`` have ``levels + 1`` entries: one per resolution
    level plus the lowest-resolution level that becomes the token grid.
    """

    def __init__(self, in_ch: int, channels: list[int], layers: list[int], dim: int,
                 cond_dim: int | None = None):
        super().__init__()
        self.levels = len(channels) - 1
        self.conv_in = nn.Conv2d(in_ch, channels[0], 3, padding=1)
        self.stages = nn.ModuleList(
            nn.ModuleList(ResBlock(ch, cond_dim) for _ in range(n)) for ch, n in zip(channels, layers))
        self.down = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], 2, stride=2) for i in range(self.levels))
        self.to_tokens = nn.Linear(channels[-1], dim) if channels[-1] != dim else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor | None = None,
                cross: list[torch.Tensor] | None = None) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Returns ``(tokens [B, T'*F', dim], level_features)``; tokens are time-major."""
        h = self.conv_in(x)
        feats = []
        for i, stage in enumerate(self.stages):
            if cross is not None:
                h = h + cross[i]
            for block in stage:
                h = block(h, cond)
            if i < self.levels:
                feats.append(h)
                h = self.down[i](h)
        b, c, f, t = h.shape
        tokens = h.permute(0, 3, 2, 1).reshape(b, t * f, c)
        return self.to_tokens(tokens), feats


class Depatchifier(nn.Module):
    """Mirror of :class:`Patchifier`: tokens back up to a chunk, with additive skips.

    Also returns the feature map after each level's residual stack (``taps``,
    indexed by level, lowest resolution last); the decoder uses those as
    cross-connections.
    """

    def __init__(self, out_ch: int | None, channels: list[int], layers: list[int], dim: int,
                 grid: tuple[int, int], cond_dim: int | None = None):
        super().__init__()
        self.levels = len(channels) - 1
        self.grid = grid  # (freq, time) at the lowest resolution
        self.from_tokens = nn.Linear(dim, channels[-1]) if channels[-1] != dim else nn.Identity()
        self.stages = nn.ModuleList(
            nn.ModuleList(ResBlock(ch, cond_dim) for _ in range(n)) for ch, n in zip(channels, layers))
        self.up = nn.ModuleList(
            nn.Conv2d(channels[i + 1], channels[i], 1) for i in range(self.levels))
        if out_ch is not None:
            self.norm_out = nn.GroupNorm(_groups(channels[0]), channels[0])
            self.conv_out = nn.Conv2d(channels[0], out_ch, 3, padding=1)
        else:
            self.conv_out = None

    def forward(self, tokens: torch.Tensor, skips: list[torch.Tensor] | None = None,
                cross: list[torch.Tensor] | None = None, cond: torch.Tensor | None = None
                ) -> tuple[torch.Tensor | None, list[torch.Tensor]]:
        if skips is not None and len(skips) != self.levels:
            raise ValueError(f"expected {self.levels} skip levels, got {len(skips)}")
        b = tokens.shape[0]
        f, t = self.grid
        h = self.from_tokens(tokens).reshape(b, t, f, -1).permute(0, 3, 2, 1)
        taps: list[torch.Tensor] = [None] * (self.levels + 1)  # type: ignore[list-item]
        for i in range(self.levels, -1, -1):
            if i < self.levels:
                h = self.up[i](F.interpolate(h, scale_factor=2.0, mode="nearest"))
                if skips is not None:
                    h = h + skips[i]
            if cross is not None:
                h = h + cross[i]
            for block in self.stages[i]:
                h = block(h, cond)
            taps[i] = h
        out = self.conv_out(F.silu(self.norm_out(h))) if self.conv_out is not None else None
        return out, taps


class TransformerBlock(nn.Module):
    """Pre-LN transformer block; with ``cond_dim`` the norms are AdaLN-modulated per token."""

    def __init__(self, dim: int, heads: int, mlp_mult: int = 4, cond_dim: int | None = None):
        super().__init__()
        self.heads = heads
        affine = cond_dim is None
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=affine)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=affine)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_mult * dim), nn.GELU(), nn.Linear(mlp_mult * dim, dim))
        self.ada = nn.Linear(cond_dim, 6 * dim) if cond_dim is not None else None

    def attention(self, x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        b, s, d = x.shape
        q, k, v = self.qkv(x).reshape(b, s, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(out.transpose(1, 2).reshape(b, s, d))

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None,
                cond: torch.Tensor | None = None) -> torch.Tensor:
        if self.ada is None:
            x = x + self.attention(self.norm1(x), mask)
            return x + self.mlp(self.norm2(x))
        if cond is None:
            raise ValueError("conditioned block called without noise conditioning")
        s1, b1, g1, s2, b2, g2 = self.ada(cond).chunk(6, dim=-1)
        x = x + g1 * self.attention(self.norm1(x) * (1 + s1) + b1, mask)
        return x + g2 * self.mlp(self.norm2(x) * (1 + s2) + b2)


class TransformerStack(nn.Module):
    def __init__(self, n_blocks: int, dim: int, heads: int, mlp_mult: int = 4,
                 cond_dim: int | None = None):
        super().__init__()
        self.dim = dim
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads, mlp_mult, cond_dim) for _ in range(n_blocks))
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None,
                cond: torch.Tensor | None = None) -> torch.Tensor:
        if x.ndim != 3 or x.shape[1] == 0:
            raise ValueError(f"expected non-empty [B, S, dim] tokens, got {tuple(x.shape)}")
        if x.shape[-1] != self.dim:
            raise ValueError(f"token dim {x.shape[-1]} != configured dim {self.dim}")
        if mask is not None and tuple(mask.shape) != (x.shape[1], x.shape[1]):
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match sequence length {x.shape[1]}")
        for block in self.blocks:
            x = block(x, mask, cond)
        return self.norm(x)
