"""Waveform <-> latent sequence pipeline with autoregressive two-step decoding."""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .autoencoder import M2L2Model
from .spectral import (ComplexSpectrogramChunk, SpectralError, WaveformSegment, amplitude_compress,
                       expand_tensor, istft, stft)

LATENT_MAGIC = b"M2L2"
LATENT_VERSION = 1


class CodecError(ValueError):
    pass


@dataclass
class LatentSequence:
    latents: np.ndarray  # [T, K, d_lat] float32
    sample_rate: int
    original_length: int
    channels: int
    fingerprint: str
    sigma_cond: float | None = None

    @property
    def n_chunks(self) -> int:
        return self.latents.shape[0]

    def header(self) -> dict:
        h = {
            "shape": list(self.latents.shape),
            "sample_rate": self.sample_rate,
            "original_length": self.original_length,
            "channels": self.channels,
            "fingerprint": self.fingerprint,
        }
        if self.sigma_cond is not None:
            h["sigma_cond"] = self.sigma_cond
        return h


@dataclass
class DecodeOptions:
    sigma_cond: float = 0.4
    seed: int = 0


def save_latents(path: str | Path, seq: LatentSequence) -> None:
    """Write ``M2L2`` | u16 version | u32 header length | JSON header | float32 LE latents."""
    header = json.dumps(seq.header(), sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(seq.latents, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(LATENT_MAGIC + struct.pack("<HI", LATENT_VERSION, len(header)) + header + payload)


def load_latents(path: str | Path) -> LatentSequence:
    raw = Path(path).read_bytes()
    if raw[:4] != LATENT_MAGIC:
        raise CodecError(f"{path}: not an M2L2 latent file")
    if len(raw) < 10:
        raise CodecError(f"{path}: truncated header")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != LATENT_VERSION:
        raise CodecError(f"{path}: unsupported latent format version {version}")
    try:
        header = json.loads(raw[10: 10 + hlen])
    except json.JSONDecodeError as e:
        raise CodecError(f"{path}: corrupt header: {e}") from e
    shape = tuple(header["shape"])
    payload = raw[10 + hlen:]
    if len(payload) != 4 * int(np.prod(shape)):
        raise CodecError(f"{path}: payload has {len(payload)} bytes, header implies {4 * int(np.prod(shape))}")
    lat = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return LatentSequence(lat, header["sample_rate"], header["original_length"], header["channels"],
                          header["fingerprint"], header.get("sigma_cond"))


def waveform_to_chunks(w: WaveformSegment, model: M2L2Model) -> torch.Tensor:
    """Pad, STFT and compress: ``[T, C, F, spec_length]``."""
    cfg = model.cfg
    if w.channels != cfg.arch.audio_channels:
        raise CodecError(f"audio has {w.channels} channels, model expects {cfg.arch.audio_channels}")
    chunks = [amplitude_compress(c, cfg.spectral).data for c in stft(w, cfg.spectral)]
    return torch.stack(chunks)


@torch.no_grad()
def encode(w: WaveformSegment, model: M2L2Model, parallel: bool = True,
           batch_size: int = 8, workers: int = 1) -> LatentSequence:
    """Encode every chunk independently; order is preserved.

    ``parallel`` batches chunks together (and fans batches out over ``workers``
    threads); ``parallel=False`` runs one chunk at a time.
    """
    if w.length == 0:
        raise CodecError("empty input")
    try:
        chunks = waveform_to_chunks(w, model)
    except SpectralError as e:
        raise CodecError(str(e)) from e
    model.eval()
    if parallel:
        groups = list(chunks.split(batch_size))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(model.encode, groups))
        else:
            parts = [model.encode(g) for g in groups]
    else:
        parts = [model.encode(c[None]) for c in chunks]
    lat = torch.cat(parts).numpy().astype(np.float32)
    return LatentSequence(lat, w.sample_rate, w.length, w.channels, model.cfg.fingerprint())


def _step_generator(seed: int, t: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed * 1_000_003 + t)


@torch.no_grad()
def decode_chunks(seq: LatentSequence, model: M2L2Model, opts: DecodeOptions | None = None) -> torch.Tensor:
    """Autoregressive decoding to compressed chunks ``[T, C, F, spec_length]``.

    Chunk 0 comes from one single-chunk evaluation at sigma_max.  Every later
    evaluation takes the previous chunk re-noised to sigma_cond (left) and fresh
    noise at sigma_max (right); its left output replaces the previous chunk.
    That makes exactly T model evaluations.
    """
    opts = opts or DecodeOptions(sigma_cond=model.cfg.decode.sigma_cond)
    cfg = model.cfg
    c = cfg.consistency
    if seq.fingerprint != cfg.fingerprint():
        raise CodecError(f"latent fingerprint {seq.fingerprint} does not match model {cfg.fingerprint()}")
    if not 0 <= opts.sigma_cond <= c.sigma_max:
        raise CodecError(f"sigma_cond {opts.sigma_cond} outside [0, {c.sigma_max}]")
    model.eval()
    dtype = next(model.parameters()).dtype
    lat = torch.from_numpy(np.asarray(seq.latents, dtype=np.float32)).to(dtype)
    shape = model.chunk_shape
    cond_level = max(opts.sigma_cond, c.sigma_min)
    out: list[torch.Tensor] = []
    prev_cross = None
    for t in range(lat.shape[0]):
        g = _step_generator(opts.seed, t)
        z = torch.randn(shape, generator=g).to(dtype)
        cross = model.decode_features(lat[t: t + 1])
        if t == 0:
            x = model.consistency((c.sigma_max * z)[None, None], torch.tensor([[c.sigma_max]], dtype=dtype),
                                  [lvl[:, None] for lvl in cross])
            out.append(x[0, 0])
        else:
            eps = torch.randn(shape, generator=g).to(dtype)
            left = out[-1] + opts.sigma_cond * eps
            noisy = torch.stack([left, c.sigma_max * z])[None]
            sig = torch.tensor([[cond_level, c.sigma_max]], dtype=dtype)
            pair = [torch.stack([a[0], b[0]])[None] for a, b in zip(prev_cross, cross)]
            x = model.consistency(noisy, sig, pair)
            out[-1] = x[0, 0]
            out.append(x[0, 1])
        prev_cross = cross
    return torch.stack(out)


def chunks_to_waveform(chunks: torch.Tensor, model: M2L2Model, length: int) -> WaveformSegment:
    s = model.cfg.spectral
    data = expand_tensor(chunks.double(), s.alpha, s.beta)
    return istft([ComplexSpectrogramChunk(d, compressed=False) for d in data], s, length=length)


def decode(seq: LatentSequence, model: M2L2Model, opts: DecodeOptions | None = None) -> WaveformSegment:
    chunks = decode_chunks(seq, model, opts)
    return chunks_to_waveform(chunks, model, seq.original_length)


def roundtrip(w: WaveformSegment, model: M2L2Model, opts: DecodeOptions | None = None
              ) -> tuple[WaveformSegment, dict]:
    from .evaluation import si_sdr

    opts = opts or DecodeOptions(sigma_cond=model.cfg.decode.sigma_cond)
    seq = encode(w, model)
    rec = decode(seq, model, opts)
    metrics = {
        "si_sdr_db": float(np.mean([si_sdr(r, x) for r, x in zip(rec.samples, w.samples)])),
        "input_length": w.length,
        "output_length": rec.length,
        "n_chunks": seq.n_chunks,
        "sample_rate": w.sample_rate,
        "sigma_cond": opts.sigma_cond,
        "seed": opts.seed,
    }
    return rec, metrics
