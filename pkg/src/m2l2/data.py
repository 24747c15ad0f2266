"""WAV corpus ingestion into batches of adjacent chunk pairs."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .config import ModelConfig
from .spectral import SpectralError, compress_tensor, read_wav, stft_frames

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    pass


class ChunkPairDataset:
    """In-memory corpus of WAV files; batch ``k`` is a pure function of (seed, k).

    Each example is a random crop of ``segment_length(2)`` samples, turned into a
    compressed spectrogram and split into two adjacent chunks.
    """

    def __init__(self, root: str | Path, cfg: ModelConfig, seed: int | None = None):
        self.cfg = cfg
        self.seed = cfg.train.seed if seed is None else seed
        self.segment = cfg.spectral.segment_length(2)
        root = Path(root)
        files = sorted(root.glob("*.wav")) if root.is_dir() else [root]
        if not files:
            raise DataError(f"no .wav files found under {root}")
        self.clips: list[np.ndarray] = []
        self.names: list[str] = []
        for f in files:
            try:
                w = read_wav(f)
            except (SpectralError, ValueError, OSError) as e:
                raise DataError(f"unreadable audio file {f}: {e}") from e
            if w.sample_rate != cfg.spectral.sample_rate:
                raise DataError(f"{f}: sample rate {w.sample_rate} != configured {cfg.spectral.sample_rate}")
            if w.channels != cfg.arch.audio_channels:
                w.samples = np.repeat(w.samples.mean(0, keepdims=True), cfg.arch.audio_channels, axis=0)
            if w.length < self.segment:
                log.warning("skipping %s: %d samples < segment length %d", f, w.length, self.segment)
                continue
            self.clips.append(w.samples.astype(np.float64))
            self.names.append(f.name)
        if not self.clips:
            raise DataError(f"no usable data: every file under {root} is shorter than {self.segment} samples")

    def __len__(self) -> int:
        return len(self.clips)

    def example(self, clip: int, offset: int) -> torch.Tensor:
        """Compressed chunk pair ``[2, C, F, T]`` for one crop."""
        s = self.cfg.spectral
        x = torch.from_numpy(self.clips[clip][:, offset: offset + self.segment])
        spec = stft_frames(x, s)
        real = torch.stack([spec.real, spec.imag], dim=1).reshape(-1, *spec.shape[1:]).float()
        real = compress_tensor(real, s.alpha, s.beta)
        return torch.stack(real.split(s.spec_length, dim=-1))

    def batch(self, iteration: int, batch_size: int | None = None) -> torch.Tensor:
        """``[B, 2, C, F, T]``; deterministic in (seed, iteration)."""
        b = batch_size or self.cfg.train.batch
        rng = np.random.default_rng([self.seed, iteration])
        out = []
        for _ in range(b):
            clip = int(rng.integers(len(self.clips)))
            align = self.cfg.train.crop_align
            offset = align * int(rng.integers((self.clips[clip].shape[1] - self.segment) // align + 1))
            out.append(self.example(clip, offset))
        return torch.stack(out)

    def stream(self, start: int = 0, batch_size: int | None = None) -> Iterator[torch.Tensor]:
        k = start
        while True:
            yield self.batch(k, batch_size)
            k += 1


def ingest_dataset(root: str | Path, cfg: ModelConfig, seed: int | None = None,
                   start: int = 0) -> Iterator[torch.Tensor]:
    """Stream of chunk-pair batches from a directory of WAV files."""
    return ChunkPairDataset(root, cfg, seed).stream(start)
