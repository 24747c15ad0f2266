"""STFT chunking, amplitude compression and WAV I/O.

Geometry (paper preset): n_fft 2048, hop 512, periodic Hann window, no
centering.  The Nyquist bin is dropped so the frequency axis has n_fft/2
bins; it is reinserted as zero before inversion.  A chunk is a real tensor of
shape ``[2 * channels, n_fft // 2, spec_length]`` holding real/imag pairs per
audio channel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile

from .config import ConfigError, SpectralConfig


class SpectralError(ValueError):
    pass


@dataclass
class WaveformSegment:
    samples: np.ndarray  # [channels, length]
    sample_rate: int

    def __post_init__(self) -> None:
        a = np.asarray(self.samples)
        if a.ndim == 1:
            a = a[None, :]
        if a.ndim != 2 or a.shape[0] not in (1, 2):
            raise SpectralError(f"expected [channels, length] with 1 or 2 channels, got {a.shape}")
        self.samples = a

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass
class ComplexSpectrogramChunk:
    data: torch.Tensor  # [2 * channels, F, spec_length]
    compressed: bool = False


def _window(cfg: SpectralConfig, dtype=torch.float64) -> torch.Tensor:
    return torch.hann_window(cfg.n_fft, periodic=True, dtype=dtype)


def n_frames(length: int, cfg: SpectralConfig) -> int:
    """Frame count of an un-centered STFT; requires the frame equation to be integral."""
    if length < cfg.n_fft or (length - cfg.n_fft) % cfg.hop:
        raise SpectralError(
            f"length {length} does not satisfy (L - n_fft) / hop + 1 integral for "
            f"n_fft={cfg.n_fft}, hop={cfg.hop}")
    return (length - cfg.n_fft) // cfg.hop + 1


def n_chunks_for(length: int, cfg: SpectralConfig) -> int:
    """Number of chunks needed to cover ``length`` samples after right padding."""
    if length <= 0:
        raise SpectralError(f"waveform length must be positive, got {length}")
    frames = 1 if length <= cfg.n_fft else -(-(length - cfg.n_fft) // cfg.hop) + 1
    return -(-frames // cfg.spec_length)


def padded_length(length: int, cfg: SpectralConfig) -> int:
    return cfg.segment_length(n_chunks_for(length, cfg))


def pad_waveform(w: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Right zero-pad ``[channels, L]`` to the next chunk boundary."""
    target = padded_length(w.shape[-1], cfg)
    return np.pad(w, [(0, 0)] * (w.ndim - 1) + [(0, target - w.shape[-1])])


def stft_frames(x: torch.Tensor, cfg: SpectralConfig) -> torch.Tensor:
    """Complex STFT of ``[..., L]`` -> ``[..., n_fft // 2, frames]`` (Nyquist dropped)."""
    n_frames(x.shape[-1], cfg)
    frames = x.unfold(-1, cfg.n_fft, cfg.hop)  # [..., frames, n_fft]
    spec = torch.fft.rfft(frames * _window(cfg, x.dtype), dim=-1)
    return spec[..., : cfg.n_freq].transpose(-1, -2)


def istft_frames(spec: torch.Tensor, cfg: SpectralConfig) -> torch.Tensor:
    """Weighted overlap-add inverse of :func:`stft_frames`."""
    n = spec.shape[-1]
    full = torch.cat([spec, torch.zeros_like(spec[..., :1, :])], dim=-2)  # Nyquist back
    frames = torch.fft.irfft(full.transpose(-1, -2), n=cfg.n_fft, dim=-1)
    win = _window(cfg, frames.dtype)
    frames = frames * win
    length = (n - 1) * cfg.hop + cfg.n_fft
    lead = frames.shape[:-2]
    flat = frames.reshape(-1, n, cfg.n_fft).transpose(1, 2)  # [B, n_fft, frames]
    out = torch.nn.functional.fold(flat, (1, length), (1, cfg.n_fft), stride=(1, cfg.hop))
    env = torch.nn.functional.fold(
        (win**2).reshape(1, -1, 1).expand(1, -1, n), (1, length), (1, cfg.n_fft), stride=(1, cfg.hop))
    # floor keeps the half-covered edges bounded instead of amplifying errors
    env = env.clamp_min(1e-3 * float(env.max()))
    return (out / env).reshape(*lead, length)


def _check_rate(sample_rate: int, cfg: SpectralConfig) -> None:
    if sample_rate != cfg.sample_rate:
        raise SpectralError(
            f"sample rate mismatch: audio is {sample_rate} Hz, config expects {cfg.sample_rate} Hz "
            "(resampling is not supported)")


def stft(w: WaveformSegment, cfg: SpectralConfig) -> list[ComplexSpectrogramChunk]:
    """Pad, transform and split a waveform into uncompressed chunks."""
    _check_rate(w.sample_rate, cfg)
    if w.length <= 0:
        raise SpectralError("waveform length must be positive")
    x = torch.from_numpy(pad_waveform(np.asarray(w.samples, dtype=np.float64), cfg))
    spec = stft_frames(x, cfg)  # [channels, F, frames], complex
    real = torch.stack([spec.real, spec.imag], dim=1).reshape(-1, *spec.shape[1:]).float()
    return [ComplexSpectrogramChunk(c.contiguous(), compressed=False)
            for c in real.split(cfg.spec_length, dim=-1)]


def istft(chunks: list[ComplexSpectrogramChunk], cfg: SpectralConfig,
          length: int | None = None) -> WaveformSegment:
    if not chunks:
        raise SpectralError("no chunks to invert")
    if any(c.compressed for c in chunks):
        raise SpectralError("istft requires uncompressed chunks; call amplitude_expand first")
    shapes = {tuple(c.data.shape) for c in chunks}
    if len(shapes) != 1:
        raise SpectralError(f"inconsistent chunk shapes: {sorted(shapes)}")
    data = torch.cat([c.data for c in chunks], dim=-1).double()
    spec = torch.complex(data[0::2], data[1::2])
    wav = istft_frames(spec, cfg).numpy()
    if length is not None:
        wav = wav[..., :length]
    return WaveformSegment(wav, cfg.sample_rate)


def _check_amp(cfg: SpectralConfig) -> None:
    if cfg.alpha <= 0:
        raise ConfigError("spectral.alpha", "must be > 0")
    if cfg.beta <= 0:
        raise ConfigError("spectral.beta", "must be > 0")


def compress_tensor(x: torch.Tensor, alpha: float, beta: float) -> torch.Tensor:
    """beta * |c|^alpha * exp(i angle c) on interleaved real/imag channels (dim -3)."""
    re, im = x[..., 0::2, :, :], x[..., 1::2, :, :]
    mag = torch.sqrt(re * re + im * im)
    scale = torch.where(mag > 0, beta * mag.clamp_min(1e-30).pow(alpha - 1.0), torch.zeros_like(mag))
    return _interleave(re * scale, im * scale)


def expand_tensor(x: torch.Tensor, alpha: float, beta: float) -> torch.Tensor:
    re, im = x[..., 0::2, :, :], x[..., 1::2, :, :]
    mag = torch.sqrt(re * re + im * im)
    safe = mag.clamp_min(1e-30)
    scale = torch.where(mag > 0, (safe / beta).pow(1.0 / alpha) / safe, torch.zeros_like(mag))
    return _interleave(re * scale, im * scale)


def _interleave(re: torch.Tensor, im: torch.Tensor) -> torch.Tensor:
    out = torch.stack([re, im], dim=-3)  # [..., ch, 2, F, T]
    return out.reshape(*re.shape[:-3], 2 * re.shape[-3], *re.shape[-2:])


def amplitude_compress(c: ComplexSpectrogramChunk, cfg: SpectralConfig) -> ComplexSpectrogramChunk:
    _check_amp(cfg)
    if c.compressed:
        raise SpectralError("chunk is already compressed")
    return ComplexSpectrogramChunk(compress_tensor(c.data, cfg.alpha, cfg.beta), compressed=True)


def amplitude_expand(c: ComplexSpectrogramChunk, cfg: SpectralConfig) -> ComplexSpectrogramChunk:
    _check_amp(cfg)
    if not c.compressed:
        raise SpectralError("chunk is not compressed")
    return ComplexSpectrogramChunk(expand_tensor(c.data, cfg.alpha, cfg.beta), compressed=False)


# WAV I/O ---------------------------------------------------------------------

def read_wav(path: str | Path) -> WaveformSegment:
    """Read 16-bit PCM or 32-bit float RIFF WAV into float64 ``[channels, L]``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", wavfile.WavFileWarning)
        rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise SpectralError(f"{path}: unsupported WAV sample type {data.dtype} (need int16 or float32)")
    x = x[None, :] if x.ndim == 1 else x.T
    if x.shape[0] not in (1, 2):
        raise SpectralError(f"{path}: {x.shape[0]} channels, only mono or stereo supported")
    if x.shape[1] == 0:
        raise SpectralError(f"{path}: empty WAV file")
    return WaveformSegment(x, int(rate))


def write_wav(path: str | Path, w: WaveformSegment, pcm16: bool = False) -> None:
    x = np.asarray(w.samples)
    if pcm16:
        data = np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    data = data[0] if data.shape[0] == 1 else data.T
    wavfile.write(str(path), int(w.sample_rate), data)

