"""Model configuration: nested dataclasses, presets, validation and fingerprinting.

A config is a single JSON document.  It may name a preset (``"preset": "toy"``)
and override any subset of fields; everything else is filled from the preset.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a configuration value violates a constraint."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class SpectralConfig:
    sample_rate: int = 44100
    n_fft: int = 2048
    hop: int = 512
    window: str = "hann"
    alpha: float = 0.65
    beta: float = 0.35
    spec_length: int = 64

    @property
    def n_freq(self) -> int:
        # Nyquist bin dropped
        return self.n_fft // 2

    @property
    def chunk_samples(self) -> int:
        """Waveform samples advanced per chunk."""
        return self.spec_length * self.hop

    def segment_length(self, n_chunks: int = 2) -> int:
        """Waveform length whose STFT yields exactly ``n_chunks`` chunks."""
        return (n_chunks * self.spec_length - 1) * self.hop + self.n_fft


@dataclass
class ArchConfig:
    levels: int = 5
    layers_per_level: list[int] = field(default_factory=lambda: [3, 3, 3, 4, 5, 1])
    channels_per_level: list[int] = field(default_factory=lambda: [64, 128, 256, 256, 256, 256])
    dim: int = 256
    heads: int = 4
    mlp_mult: int = 4
    n_transformer_blocks: int = 16
    noise_channels: int = 256
    K: int = 8
    d_lat: int = 64
    variant: str = "summary"
    stereo: bool = False
    use_c_in: bool = False

    @property
    def audio_channels(self) -> int:
        return 2 if self.stereo else 1

    @property
    def in_channels(self) -> int:
        return 2 * self.audio_channels


@dataclass
class ConsistencyConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    sigma_data: float = 0.5
    rho: float = 7.0
    c_factor: float = 0.00054
    s0: int = 10
    s1: int = 1280
    noise_distribution: str = "uniform"
    lognormal_mean: float = -1.1
    lognormal_std: float = 2.0


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_final: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    ema_momentum: float = 0.9999
    batch: int = 16
    total_iterations: int = 1_000_000
    seed: int = 0
    # training crops start at multiples of this many samples (1 = anywhere)
    crop_align: int = 1


@dataclass
class DecodeConfig:
    sigma_cond: float = 0.4


@dataclass
class ModelConfig:
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    # derived geometry -------------------------------------------------

    @property
    def tokens_per_chunk(self) -> int:
        f = 2**self.arch.levels
        return (self.spectral.spec_length // f) * (self.spectral.n_freq // f)

    @property
    def latent_values_per_chunk(self) -> int:
        return self.arch.K * self.arch.d_lat

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        base = preset_dict(preset) if preset is not None else ModelConfig().to_dict()
        merged = _deep_merge(base, d)
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, sub in merged.items():
            if name not in sections:
                raise ConfigError(name, "unknown config section")
            sub_cls = _SECTION_CLASSES[name]
            known = {f.name for f in dataclasses.fields(sub_cls)}
            for key in sub:
                if key not in known:
                    raise ConfigError(f"{name}.{key}", "unknown config field")
            kwargs[name] = sub_cls(**sub)
        cfg = cls(**kwargs)
        validate(cfg)
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **overrides: dict[str, Any]) -> "ModelConfig":
        """Return a validated copy with nested overrides, e.g. ``arch={"variant": "ordered"}``."""
        return ModelConfig.from_dict(_deep_merge(self.to_dict(), overrides))


_SECTION_CLASSES = {
    "spectral": SpectralConfig,
    "arch": ArchConfig,
    "consistency": ConsistencyConfig,
    "train": TrainConfig,
    "decode": DecodeConfig,
}


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _toy_overrides() -> dict[str, Any]:
    return {
        # beta lifts the compressed-spectrum std from ~0.1 to ~0.5 at this n_fft
        "spectral": {"sample_rate": 16000, "n_fft": 128, "hop": 32, "spec_length": 16, "beta": 1.5},
        "arch": {
            "levels": 3,
            "layers_per_level": [1, 1, 1, 1],
            "channels_per_level": [32, 64, 64, 64],
            "dim": 64,
            "heads": 4,
            "n_transformer_blocks": 2,
            "noise_channels": 64,
            "K": 4,
            "d_lat": 16,
            "use_c_in": True,
        },
        # two rungs (plain denoising at sigma_max) for the first half, four after
        "consistency": {"s0": 2, "s1": 8},
        "train": {
            "lr0": 1e-3,
            "lr_final": 1e-5,
            "ema_momentum": 0.99,
            "batch": 4,
            "total_iterations": 2000,
            "crop_align": 512,
        },
    }


def preset_dict(name: str) -> dict[str, Any]:
    paper = ModelConfig().to_dict()
    if name == "paper":
        return paper
    if name == "toy":
        return _deep_merge(paper, _toy_overrides())
    raise ConfigError("preset", f"unknown preset {name!r} (expected 'paper' or 'toy')")


def preset(name: str, **overrides: dict[str, Any]) -> ModelConfig:
    return ModelConfig.from_dict({"preset": name, **overrides})


def load_config(path: str | Path) -> ModelConfig:
    """Load a JSON config; ``M2L2_SEED`` in the environment overrides the training seed."""
    d = json.loads(Path(path).read_text())
    seed = os.environ.get("M2L2_SEED")
    if seed is not None:
        d = _deep_merge(d, {"train": {"seed": int(seed)}})
    return ModelConfig.from_dict(d)


def validate(cfg: ModelConfig) -> None:
    s, a, c, t, dec = cfg.spectral, cfg.arch, cfg.consistency, cfg.train, cfg.decode

    def need(ok: bool, name: str, msg: str) -> None:
        if not ok:
            raise ConfigError(name, msg)

    need(s.sample_rate > 0, "spectral.sample_rate", "must be positive")
    need(s.n_fft > 0 and s.n_fft % 2 == 0, "spectral.n_fft", "must be a positive even integer")
    need(0 < s.hop <= s.n_fft, "spectral.hop", "must satisfy 0 < hop <= n_fft")
    need(s.n_fft % s.hop == 0, "spectral.hop", "n_fft must be a multiple of hop")
    need(s.window == "hann", "spectral.window", "only 'hann' is supported")
    need(s.alpha > 0, "spectral.alpha", "must be > 0")
    need(s.beta > 0, "spectral.beta", "must be > 0")
    need(s.spec_length > 0, "spectral.spec_length", "must be positive")

    need(a.levels >= 1, "arch.levels", "must be >= 1")
    need(len(a.layers_per_level) == a.levels + 1, "arch.layers_per_level",
         f"needs levels+1 = {a.levels + 1} entries")
    need(len(a.channels_per_level) == a.levels + 1, "arch.channels_per_level",
         f"needs levels+1 = {a.levels + 1} entries")
    need(all(n >= 1 for n in a.layers_per_level), "arch.layers_per_level", "entries must be >= 1")
    need(all(ch >= 4 and ch % 4 == 0 for ch in a.channels_per_level), "arch.channels_per_level",
         "entries must be positive multiples of 4")
    f = 2**a.levels
    need(s.n_freq % f == 0, "spectral.n_fft", f"n_fft/2 = {s.n_freq} must be divisible by 2^levels = {f}")
    need(s.spec_length % f == 0, "spectral.spec_length", f"must be divisible by 2^levels = {f}")
    need(a.dim > 0 and a.heads > 0 and a.dim % a.heads == 0, "arch.heads", "dim must be divisible by heads")
    need(a.mlp_mult >= 1, "arch.mlp_mult", "must be >= 1")
    need(a.n_transformer_blocks >= 1, "arch.n_transformer_blocks", "must be >= 1")
    need(a.noise_channels >= 2 and a.noise_channels % 2 == 0, "arch.noise_channels", "must be even")
    need(a.K >= 1, "arch.K", "must be >= 1")
    need(a.d_lat >= 1, "arch.d_lat", "must be >= 1")
    need(a.variant in ("summary", "ordered"), "arch.variant", "must be 'summary' or 'ordered'")
    if a.variant == "ordered":
        need(cfg.latent_values_per_chunk % cfg.tokens_per_chunk == 0, "arch.variant",
             f"latent budget K*d_lat = {cfg.latent_values_per_chunk} not divisible by "
             f"token count {cfg.tokens_per_chunk}")

    need(c.sigma_min > 0, "consistency.sigma_min", "must be > 0")
    need(c.sigma_max > c.sigma_min, "consistency.sigma_max", "must exceed sigma_min")
    need(c.sigma_data > 0, "consistency.sigma_data", "must be > 0")
    need(c.rho > 0, "consistency.rho", "must be > 0")
    need(c.c_factor > 0, "consistency.c_factor", "must be > 0")
    need(1 < c.s0 <= c.s1, "consistency.s0", "must satisfy 1 < s0 <= s1")
    need(c.noise_distribution in ("uniform", "lognormal"), "consistency.noise_distribution",
         "must be 'uniform' or 'lognormal'")
    need(c.lognormal_std > 0, "consistency.lognormal_std", "must be > 0")

    need(t.lr0 > 0 and t.lr_final > 0, "train.lr0", "learning rates must be > 0")
    need(0 <= t.beta1 < 1 and 0 <= t.beta2 < 1, "train.beta1", "betas must lie in [0, 1)")
    need(0 <= t.ema_momentum < 1, "train.ema_momentum", "must lie in [0, 1)")
    need(t.batch >= 1, "train.batch", "must be >= 1")
    need(t.total_iterations >= 1, "train.total_iterations", "must be >= 1")
    need(t.crop_align >= 1, "train.crop_align", "must be >= 1")

    need(0 <= dec.sigma_cond <= c.sigma_max, "decode.sigma_cond", "must lie in [0, sigma_max]")
    need(math.isfinite(dec.sigma_cond), "decode.sigma_cond", "must be finite")


def compression_report(cfg: ModelConfig) -> dict[str, float]:
    """Compression bookkeeping derived from the config alone."""
    s, a = cfg.spectral, cfg.arch
    samples = s.chunk_samples * a.audio_channels
    values = cfg.latent_values_per_chunk
    return {
        "samples_per_chunk": samples,
        "latent_values_per_chunk": values,
        "total_compression": samples / values,
        "time_compression": s.chunk_samples / a.K,
        "latent_rate_hz": s.sample_rate * a.K / s.chunk_samples,
    }
