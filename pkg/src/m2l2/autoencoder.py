"""Encoder, decoder and consistency model, plus the consistency parameterization."""

from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import (Depatchifier, NoiseConditioner, Patchifier, TransformerStack,
                     chunked_causal_mask)
from .config import ConsistencyConfig, ModelConfig


def _check_sigma(sigma: torch.Tensor, c: ConsistencyConfig) -> None:
    lo, hi = c.sigma_min * (1 - 1e-6), c.sigma_max * (1 + 1e-6)
    if not bool(torch.all((sigma >= lo) & (sigma <= hi))):
        raise ValueError(f"sigma outside [{c.sigma_min}, {c.sigma_max}]: {sigma.flatten()[:8].tolist()}")


def _as_sigma(sigma: torch.Tensor | float) -> torch.Tensor:
    if isinstance(sigma, torch.Tensor) and sigma.is_floating_point():
        return sigma
    return torch.as_tensor(sigma, dtype=torch.get_default_dtype())


def c_skip(sigma: torch.Tensor | float, c: ConsistencyConfig) -> torch.Tensor:
    sigma = _as_sigma(sigma)
    _check_sigma(sigma, c)
    return c.sigma_data**2 / ((sigma - c.sigma_min) ** 2 + c.sigma_data**2)


def c_out(sigma: torch.Tensor | float, c: ConsistencyConfig) -> torch.Tensor:
    sigma = _as_sigma(sigma)
    _check_sigma(sigma, c)
    return c.sigma_data * (sigma - c.sigma_min) / torch.sqrt(c.sigma_data**2 + sigma**2)


def _grid(cfg: ModelConfig) -> tuple[int, int]:
    f = 2**cfg.arch.levels
    return cfg.spectral.n_freq // f, cfg.spectral.spec_length // f


def _ordered_width(cfg: ModelConfig) -> int:
    return cfg.latent_values_per_chunk // cfg.tokens_per_chunk


class Encoder(nn.Module):
    """Chunk -> ``[K, d_lat]`` latents in (-1, 1).

    The summary variant appends K learned queries to the audio tokens and keeps
    only those after the transformer; the ordered variant projects every audio
    token to ``K * d_lat / T`` values instead.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        a = cfg.arch
        self.cfg = cfg
        self.summary = a.variant == "summary"
        n_tok = cfg.tokens_per_chunk
        self.patch = Patchifier(a.in_channels, a.channels_per_level, a.layers_per_level, a.dim)
        self.pos = nn.Parameter(0.02 * torch.randn(n_tok, a.dim))
        if self.summary:
            self.queries = nn.Parameter(0.02 * torch.randn(a.K, a.dim))
        self.transformer = TransformerStack(a.n_transformer_blocks, a.dim, a.heads, a.mlp_mult)
        self.head = nn.Linear(a.dim, a.d_lat if self.summary else _ordered_width(cfg))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Transformer outputs that feed the latent head (summary slots or audio tokens)."""
        tokens, _ = self.patch(x)
        tokens = tokens + self.pos
        if self.summary:
            q = self.queries.expand(tokens.shape[0], -1, -1)
            return self.transformer(torch.cat([tokens, q], dim=1))[:, tokens.shape[1]:]
        return self.transformer(tokens)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a = self.cfg.arch
        z = torch.tanh(self.head(self.features(x)))
        return z.reshape(x.shape[0], a.K, a.d_lat)


class Decoder(nn.Module):
    """Latents -> per-level feature maps (cross-connections for the consistency model)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        a = cfg.arch
        self.cfg = cfg
        self.summary = a.variant == "summary"
        n_tok = cfg.tokens_per_chunk
        if self.summary:
            self.lift = nn.Linear(a.d_lat, a.dim)
            self.mask_tokens = nn.Parameter(0.02 * torch.randn(n_tok, a.dim))
        else:
            self.lift = nn.Linear(_ordered_width(cfg), a.dim)
            self.pos = nn.Parameter(0.02 * torch.randn(n_tok, a.dim))
        self.transformer = TransformerStack(a.n_transformer_blocks, a.dim, a.heads, a.mlp_mult)
        self.depatch = Depatchifier(None, a.channels_per_level, a.layers_per_level, a.dim, _grid(cfg))

    def forward(self, latents: torch.Tensor) -> list[torch.Tensor]:
        a = self.cfg.arch
        if tuple(latents.shape[1:]) != (a.K, a.d_lat):
            raise ValueError(f"latents must be [B, {a.K}, {a.d_lat}], got {tuple(latents.shape)}")
        b = latents.shape[0]
        n_tok = self.cfg.tokens_per_chunk
        if self.summary:
            mask = self.mask_tokens.expand(b, -1, -1)
            h = self.transformer(torch.cat([mask, self.lift(latents)], dim=1))[:, :n_tok]
        else:
            h = self.transformer(self.lift(latents.reshape(b, n_tok, -1)) + self.pos)
        _, taps = self.depatch(h)
        return taps


class ConsistencyNet(nn.Module):
    """The raw network F(x_sigma, sigma | cross) over a sequence of consecutive chunks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        a = cfg.arch
        self.cfg = cfg
        cond = a.noise_channels
        self.noise = NoiseConditioner(a.noise_channels, cond)
        self.patch = Patchifier(a.in_channels, a.channels_per_level, a.layers_per_level, a.dim, cond)
        self.pos = nn.Parameter(0.02 * torch.randn(2 * cfg.tokens_per_chunk, a.dim))
        self.transformer = TransformerStack(a.n_transformer_blocks, a.dim, a.heads, a.mlp_mult, cond)
        self.depatch = Depatchifier(a.in_channels, a.channels_per_level, a.layers_per_level, a.dim,
                                    _grid(cfg), cond)

    def forward(self, x: torch.Tensor, sigma: torch.Tensor, cross: list[torch.Tensor]) -> torch.Tensor:
        """``x`` is ``[B, n, C, F, T]``, ``sigma`` ``[B, n]``, cross levels ``[B, n, ch, f, t]``."""
        b, n = x.shape[:2]
        if n > self.pos.shape[0] // self.cfg.tokens_per_chunk:
            raise ValueError(f"at most 2 chunks per evaluation, got {n}")
        flat = x.reshape(b * n, *x.shape[2:])
        cond = self.noise(sigma.reshape(b * n))
        cross_flat = [c.reshape(b * n, *c.shape[2:]) for c in cross]
        tokens, skips = self.patch(flat, cond, cross_flat)
        t = tokens.shape[1]
        seq = tokens.reshape(b, n * t, -1) + self.pos[: n * t]
        tok_cond = cond.reshape(b, n, 1, -1).expand(b, n, t, -1).reshape(b, n * t, -1)
        mask = chunked_causal_mask(t, n) if n > 1 else None
        seq = self.transformer(seq, mask, tok_cond)
        out, _ = self.depatch(seq.reshape(b * n, t, -1), skips, None, cond)
        return out.reshape(x.shape)


class M2L2Model(nn.Module):
    """Encoder, decoder and consistency model sharing one config."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.cm = ConsistencyNet(cfg)
        self.cm_evaluations = 0

    @property
    def chunk_shape(self) -> tuple[int, int, int]:
        return (self.cfg.arch.in_channels, self.cfg.spectral.n_freq, self.cfg.spectral.spec_length)

    def _check_chunks(self, x: torch.Tensor) -> None:
        if tuple(x.shape[-3:]) != self.chunk_shape:
            raise ValueError(f"chunk shape {tuple(x.shape[-3:])} != expected {self.chunk_shape}")

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Compressed chunks ``[B, C, F, T]`` -> latents ``[B, K, d_lat]``."""
        self._check_chunks(x)
        return self.encoder(x)

    def decode_features(self, latents: torch.Tensor) -> list[torch.Tensor]:
        return self.decoder(latents)

    def consistency(self, noisy: torch.Tensor, sigma: torch.Tensor,
                    cross: list[torch.Tensor]) -> torch.Tensor:
        """Denoise ``[B, n, C, F, T]`` (n = 1 or 2) at per-chunk levels ``sigma [B, n]``."""
        c = self.cfg.consistency
        self._check_chunks(noisy)
        if noisy.ndim != 5:
            raise ValueError(f"expected [B, n, C, F, T], got {tuple(noisy.shape)}")
        if cross is None or len(cross) != self.cfg.arch.levels + 1:
            raise ValueError("cross-connections required for every level")
        b, n = noisy.shape[:2]
        for lvl in cross:
            if tuple(lvl.shape[:2]) != (b, n):
                raise ValueError(f"cross-connections for {tuple(lvl.shape[:2])} chunks, input has {(b, n)}")
        sigma = torch.as_tensor(sigma, dtype=noisy.dtype).expand(b, n)
        self.cm_evaluations += 1
        cs = c_skip(sigma, c).to(noisy.dtype)[..., None, None, None]
        co = c_out(sigma, c).to(noisy.dtype)[..., None, None, None]
        inp = noisy
        if self.cfg.arch.use_c_in:
            inp = noisy / torch.sqrt(sigma**2 + c.sigma_data**2)[..., None, None, None]
        return cs * noisy + co * self.cm(inp, sigma, cross)


def stack_cross(per_chunk: list[list[torch.Tensor]]) -> list[torch.Tensor]:
    """Combine per-chunk cross-connections (each level ``[B, ...]``) into ``[B, n, ...]``."""
    return [torch.stack(levels, dim=1) for levels in zip(*per_chunk)]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
