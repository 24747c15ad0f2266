import numpy as np
import pytest
import torch

from m2l2.autoencoder import M2L2Model
from m2l2.config import preset

TINY = {
    "spectral": {"sample_rate": 8000, "n_fft": 64, "hop": 16, "spec_length": 8},
    "arch": {
        "levels": 2,
        "layers_per_level": [1, 1, 1],
        "channels_per_level": [8, 8, 8],
        "dim": 8,
        "heads": 2,
        "n_transformer_blocks": 1,
        "noise_channels": 8,
        "K": 4,
        "d_lat": 8,
    },
    "train": {"batch": 2, "total_iterations": 100, "lr0": 1e-3, "ema_momentum": 0.9},
}


def tiny_cfg(**over):
    cfg = preset("toy", **TINY)
    return cfg.replace(**over) if over else cfg


@pytest.fixture
def tiny():
    return tiny_cfg()


@pytest.fixture
def tiny_model(tiny):
    torch.manual_seed(0)
    return M2L2Model(tiny).eval()


@pytest.fixture
def toy_cfg():
    return preset("toy")


@pytest.fixture(scope="session")
def paper_model():
    torch.manual_seed(0)
    return M2L2Model(preset("paper")).eval()


def random_chunks(cfg, *lead, seed=0):
    g = torch.Generator().manual_seed(seed)
    shape = (*lead, cfg.arch.in_channels, cfg.spectral.n_freq, cfg.spectral.spec_length)
    return torch.randn(shape, generator=g)


def random_cross(model, b, n, seed=0):
    g = torch.Generator().manual_seed(seed)
    lat = torch.rand((b * n, model.cfg.arch.K, model.cfg.arch.d_lat), generator=g) * 2 - 1
    with torch.no_grad():
        feats = model.decode_features(lat)
    return [f.reshape(b, n, *f.shape[1:]) for f in feats]


def broadband(length, n_fft, rng):
    """Random-phase sum of every bin-centred sinusoid below bin n_fft/2 - 1.

    A periodic Hann window spreads a bin-centred tone over bins k-1..k+1 only, so
    this signal has exactly zero content in the Nyquist bin that the front end drops.
    """
    t = np.arange(length)
    k = np.arange(n_fft // 2 - 1)[:, None]
    amp = rng.uniform(0.1, 1.0, size=k.shape)
    phase = rng.uniform(0, 2 * np.pi, size=k.shape)
    x = (amp * np.cos(2 * np.pi * k * t / n_fft + phase)).sum(axis=0)
    return x / np.abs(x).max()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
