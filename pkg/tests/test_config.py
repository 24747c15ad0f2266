import json

import pytest

from m2l2.config import ConfigError, ModelConfig, compression_report, load_config, preset


def test_presets_validate():
    paper = preset("paper")
    toy = preset("toy")
    assert paper.tokens_per_chunk == 64
    assert toy.tokens_per_chunk == 16
    assert paper.spectral.segment_length(2) == 67072


def test_preset_inheritance_and_overrides():
    cfg = ModelConfig.from_dict({"preset": "toy", "arch": {"K": 8}})
    assert cfg.arch.K == 8
    assert cfg.arch.dim == preset("toy").arch.dim


def test_fingerprint_stable_and_sensitive():
    a, b = preset("toy"), preset("toy")
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != a.replace(arch={"d_lat": 8}).fingerprint()


def test_json_roundtrip():
    cfg = preset("toy")
    assert ModelConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize(
    "override, field",
    [
        ({"spectral": {"alpha": 0}}, "spectral.alpha"),
        ({"spectral": {"beta": -1}}, "spectral.beta"),
        ({"spectral": {"n_fft": 36, "hop": 4}}, "spectral.n_fft"),
        ({"spectral": {"spec_length": 12}}, "spectral.spec_length"),
        ({"arch": {"layers_per_level": [1, 1]}}, "arch.layers_per_level"),
        ({"arch": {"heads": 3}}, "arch.heads"),
        ({"arch": {"variant": "ordered", "K": 3, "d_lat": 3}}, "arch.variant"),
        ({"arch": {"variant": "bogus"}}, "arch.variant"),
        ({"consistency": {"sigma_min": 0}}, "consistency.sigma_min"),
        ({"consistency": {"sigma_max": 0.001}}, "consistency.sigma_max"),
        ({"consistency": {"s0": 1}}, "consistency.s0"),
        ({"train": {"ema_momentum": 1.0}}, "train.ema_momentum"),
        ({"decode": {"sigma_cond": 100.0}}, "decode.sigma_cond"),
        ({"arch": {"nonsense": 1}}, "arch.nonsense"),
    ],
)
def test_validation_names_field(override, field):
    with pytest.raises(ConfigError) as e:
        ModelConfig.from_dict({"preset": "toy", **override})
    assert e.value.field == field
    assert field in str(e.value)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="preset"):
        preset("huge")


def test_env_seed_override(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "toy"}))
    monkeypatch.setenv("M2L2_SEED", "17")
    assert load_config(p).train.seed == 17


def test_compression_report_paper():
    r = compression_report(preset("paper"))
    assert r["total_compression"] == 64
    assert r["time_compression"] == 4096
    assert r["latent_rate_hz"] == 44100 / 4096


def test_compression_report_stereo_doubles():
    r = compression_report(preset("paper", arch={"stereo": True}))
    assert r["total_compression"] == 128
