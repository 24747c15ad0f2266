"""Reconstruction metrics (SI-SDR, Fréchet distance) and the sigma_cond sweep."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

SI_SDR_CAP_DB = 100.0


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at ``SI_SDR_CAP_DB`` for a zero residual."""
    est = np.asarray(estimate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.size} vs {ref.size}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    target = (np.dot(est, ref) / ref_energy) * ref
    resid = est - target
    num, den = np.dot(target, target), np.dot(resid, resid)
    if den <= num * 10 ** (-SI_SDR_CAP_DB / 10):
        return SI_SDR_CAP_DB
    return float(10 * np.log10(num / den))


@dataclass
class EmbeddingStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class Embedder(Protocol):
    name: str
    dim: int

    def __call__(self, audio: np.ndarray, sample_rate: int) -> np.ndarray:
        """``[channels, L]`` or ``[L]`` audio -> ``[n, dim]`` embeddings."""


def _frames(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    if x.shape[-1] < win:
        x = np.pad(x, (0, win - x.shape[-1]))
    n = 1 + (x.shape[-1] - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters, ``[n_mels, n_fft // 2 + 1]``."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / np.maximum(mid - lo, 1e-9)
    down = (hi - freqs[None]) / np.maximum(hi - mid, 1e-9)
    return np.maximum(0.0, np.minimum(up, down))


class LogMelEmbedder:
    """Mean and std of log-mel band energies pooled over fixed windows (default 1 s)."""

    def __init__(self, n_mels: int = 16, n_fft: int = 512, window_seconds: float = 1.0):
        self.n_mels = n_mels
        self.n_fft = n_fft
        self.window_seconds = window_seconds
        self.name = f"logmel{n_mels}"
        self.dim = 2 * n_mels

    def __call__(self, audio: np.ndarray, sample_rate: int) -> np.ndarray:
        x = np.asarray(audio, dtype=np.float64)
        x = x.mean(axis=0) if x.ndim == 2 else x
        hop = self.n_fft // 4
        spec = np.abs(np.fft.rfft(_frames(x, self.n_fft, hop) * np.hanning(self.n_fft), axis=-1)) ** 2
        logmel = np.log(spec @ mel_filterbank(self.n_mels, self.n_fft, sample_rate).T + 1e-8)
        per_win = max(1, int(round(self.window_seconds * sample_rate / hop)))
        n_win = max(1, logmel.shape[0] // per_win)
        pooled = [logmel[i * per_win:(i + 1) * per_win] for i in range(n_win)]
        return np.stack([np.concatenate([p.mean(0), p.std(0)]) for p in pooled])


class RandomProjectionEmbedder:
    """Seeded random projection of per-frame log-magnitude spectra."""

    def __init__(self, dim: int = 16, n_fft: int = 256, seed: int = 0):
        self.dim = dim
        self.n_fft = n_fft
        self.seed = seed
        self.name = f"randproj{dim}-s{seed}"
        rng = np.random.default_rng(seed)
        self.proj = rng.standard_normal((n_fft // 2 + 1, dim)) / math.sqrt(n_fft // 2 + 1)

    def __call__(self, audio: np.ndarray, sample_rate: int) -> np.ndarray:
        x = np.asarray(audio, dtype=np.float64)
        x = x.mean(axis=0) if x.ndim == 2 else x
        frames = _frames(x, self.n_fft, self.n_fft // 2)
        logmag = np.log(np.abs(np.fft.rfft(frames * np.hanning(self.n_fft), axis=-1)) + 1e-6)
        return logmag @ self.proj


EMBEDDERS = {"logmel": LogMelEmbedder, "randproj": RandomProjectionEmbedder}


def embedding_stats(embeddings: np.ndarray | Sequence[np.ndarray]) -> EmbeddingStats:
    """Sample mean and unbiased covariance over all rows of the given embedding sets."""
    if isinstance(embeddings, np.ndarray):
        e = np.atleast_2d(embeddings)
    else:
        e = np.concatenate([np.atleast_2d(x) for x in embeddings])
    if e.shape[0] < 2:
        raise ValueError(f"need at least 2 embeddings, got {e.shape[0]}")
    e = e.astype(np.float64)
    cov = np.cov(e, rowvar=False, ddof=1)
    cov = np.atleast_2d(0.5 * (cov + cov.T))
    return EmbeddingStats(e.mean(axis=0), cov, e.shape[0])


def audio_stats(audio_set: Sequence[np.ndarray], sample_rate: int, embedder: Embedder) -> EmbeddingStats:
    return embedding_stats([embedder(a, sample_rate) for a in audio_set])


def _psd_sqrt(m: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() < -tol * max(1.0, abs(w).max()):
        raise ValueError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a: EmbeddingStats, b: EmbeddingStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at 0.

    The trace term uses Tr((S_a S_b)^(1/2)) = Tr((A S_b A)^(1/2)) with A = S_a^(1/2),
    which keeps every square root on a symmetric PSD matrix.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a = _psd_sqrt(a.cov)
    _psd_sqrt(b.cov)
    inner = root_a @ b.cov @ root_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_sqrt = np.sqrt(np.clip(w, 0, None)).sum()
    diff = a.mean - b.mean
    fd = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * tr_sqrt
    return float(max(fd, 0.0))


SWEEP_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def sigma_cond_sweep(audio_set: Sequence[np.ndarray], model, grid: Sequence[float] = SWEEP_GRID,
                     embedder: Embedder | None = None, seed: int = 0) -> list[dict]:
    """Round-trip the set at every sigma_cond and report the Fréchet distance to the originals."""
    from .codec import DecodeOptions, decode, encode
    from .spectral import WaveformSegment

    if not len(grid):
        raise ValueError("empty sigma_cond grid")
    if not len(audio_set):
        raise ValueError("empty evaluation set")
    if any(not 0 <= g <= 1 for g in grid):
        raise ValueError("sigma_cond grid must lie in [0, 1]")
    embedder = embedder or LogMelEmbedder()
    sr = model.cfg.spectral.sample_rate
    ref = audio_stats(audio_set, sr, embedder)
    seqs = [encode(WaveformSegment(a, sr), model) for a in audio_set]
    rows = []
    for g in grid:
        opts = DecodeOptions(sigma_cond=float(g), seed=seed)
        rec = [decode(s, model, opts).samples for s in seqs]
        fd = frechet_distance(ref, audio_stats(rec, sr, embedder))
        rows.append({"sigma_cond": float(g), "fd": fd, "embedder": embedder.name, "n_items": len(audio_set)})
    return rows


def write_sweep_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["sigma_cond", "fd", "embedder", "n_items"])
        w.writeheader()
        w.writerows(rows)


def write_sweep_json(path: str | Path, rows: list[dict]) -> None:
    Path(path).write_text(json.dumps(rows, indent=2))
