"""Synthetic clips for desk-scale experiments."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .spectral import WaveformSegment, write_wav


def toy_clip(seed: int, seconds: float = 2.0, sample_rate: int = 16000, chunk_samples: int = 512) -> np.ndarray:
    """A melody of harmonic notes with decaying envelopes, peak 0.5.

    Partials sit on multiples of ``sample_rate / chunk_samples`` and notes start
    every 8 chunks, so each chunk-aligned crop begins at zero phase for every
    partial.  Without that, the waveform phase is not a function of the chunk
    content and a small model cannot reconstruct it.
    """
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    grid = sample_rate / chunk_samples
    note_len = 8 * chunk_samples / sample_rate
    for start in np.arange(0.0, seconds, note_len):
        m = (t >= start) & (t < start + note_len)
        tt = t[m] - start
        f0 = int(rng.integers(4, 12)) * grid
        env = np.exp(-tt * rng.uniform(3.0, 8.0))
        for h in range(1, 4):
            out[m] += env / h * np.sin(2 * np.pi * h * f0 * tt)
    return (0.5 * out / np.abs(out).max())[None, :]


def make_toy_corpus(root: str | Path, n_clips: int = 4, seconds: float = 2.0,
                    sample_rate: int = 16000, seed: int = 0) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_clips):
        p = root / f"clip{i:02d}.wav"
        write_wav(p, WaveformSegment(toy_clip(seed * 1000 + i, seconds, sample_rate), sample_rate))
        paths.append(p)
    return paths
