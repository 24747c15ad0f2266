import json

import numpy as np
import pytest

from m2l2.cli import build_parser, main
from m2l2.experiment import CHECKPOINT_NAME, METRICS_NAME, read_metrics
from m2l2.spectral import read_wav
from m2l2.toy import make_toy_corpus

from conftest import TINY


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.json"
    cfg_path.write_text(json.dumps({"preset": "toy", **TINY}))
    make_toy_corpus(root / "data", n_clips=2, seconds=1, sample_rate=TINY["spectral"]["sample_rate"])
    assert main(["train", "--config", str(cfg_path), "--data", str(root / "data"), "--out", str(root / "run"),
                 "--steps", "3"]) == 0
    return root


def test_decode_default_sigma_cond():
    args = build_parser().parse_args(["decode", "--ckpt", "c", "--in", "a", "--out", "b"])
    assert args.sigma_cond == 0.4


def test_train_writes_metrics_and_checkpoint(workdir):
    run = workdir / "run"
    assert (run / CHECKPOINT_NAME).exists() and (run / "config.json").exists()
    rows = read_metrics(run / METRICS_NAME)
    assert [r["iteration"] for r in rows] == [0, 1, 2]
    assert set(rows[0]) >= {"iteration", "loss", "lr", "n_steps", "wall_time"}


def test_resume_continues_iterations(workdir, tmp_path):
    run = tmp_path / "run"
    cfg, data = str(workdir / "tiny.json"), str(workdir / "data")
    assert main(["train", "--config", cfg, "--data", data, "--out", str(run), "--steps", "2"]) == 0
    assert main(["train", "--config", cfg, "--data", data, "--out", str(run), "--steps", "2", "--resume"]) == 0
    rows = read_metrics(run / METRICS_NAME)
    assert [r["iteration"] for r in rows] == [0, 1, 2, 3]
    ref = read_metrics(workdir / "run" / METRICS_NAME)
    assert rows[2]["loss"] == ref[2]["loss"]


def test_encode_decode_exact_length(workdir, tmp_path):
    ckpt = str(workdir / "run" / CHECKPOINT_NAME)
    wav = workdir / "data" / "clip00.wav"
    lat, out = tmp_path / "x.latents", tmp_path / "y.wav"
    assert main(["encode", "--ckpt", ckpt, "--in", str(wav), "--out", str(lat)]) == 0
    assert main(["decode", "--ckpt", ckpt, "--in", str(lat), "--out", str(out), "--seed", "1"]) == 0
    src, rec = read_wav(wav), read_wav(out)
    assert rec.length == src.length and rec.sample_rate == src.sample_rate


def test_roundtrip_metrics_file(workdir, tmp_path):
    ckpt = str(workdir / "run" / CHECKPOINT_NAME)
    wav = str(workdir / "data" / "clip01.wav")
    assert main(["roundtrip", "--ckpt", ckpt, "--in", wav, "--out", str(tmp_path / "r.wav"),
                 "--metrics", str(tmp_path / "m.json")]) == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["input_length"] == m["output_length"] and np.isfinite(m["si_sdr_db"])


def test_decode_is_seed_deterministic(workdir, tmp_path, monkeypatch):
    ckpt = str(workdir / "run" / CHECKPOINT_NAME)
    lat = tmp_path / "x.latents"
    main(["encode", "--ckpt", ckpt, "--in", str(workdir / "data" / "clip00.wav"), "--out", str(lat)])
    for name in ("a", "b"):
        main(["decode", "--ckpt", ckpt, "--in", str(lat), "--out", str(tmp_path / f"{name}.wav"), "--seed", "5"])
    monkeypatch.setenv("M2L2_SEED", "5")
    main(["decode", "--ckpt", ckpt, "--in", str(lat), "--out", str(tmp_path / "c.wav")])
    a, b, c = (read_wav(tmp_path / f"{n}.wav").samples for n in "abc")
    assert np.array_equal(a, b) and np.array_equal(a, c)


def test_sweep_subcommand(workdir, tmp_path, capsys):
    ckpt = str(workdir / "run" / CHECKPOINT_NAME)
    out = tmp_path / "sweep.csv"
    assert main(["eval", "sweep", "--ckpt", ckpt, "--data", str(workdir / "data"), "--grid", "0,0.5",
                 "--out", str(out), "--json", str(tmp_path / "s.json"), "--embedder", "randproj"]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "sigma_cond,fd,embedder,n_items" and len(lines) == 3


def test_info(workdir, capsys):
    assert main(["info", "--config", str(workdir / "tiny.json"), "--params"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["parameters"] > 0 and len(info["fingerprint"]) == 16


def test_missing_files_exit_2(tmp_path, capsys):
    assert main(["encode", "--ckpt", str(tmp_path / "nope"), "--in", "x.wav", "--out", "y"]) == 2
    assert "no such file" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--data", ".", "--out", "o"]) == 2


def test_unknown_flag_exit_2(capsys):
    assert main(["decode", "--bogus"]) == 2
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_domain_error_exit_1(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.latents"
    bad.write_bytes(b"garbage")
    assert main(["decode", "--ckpt", str(workdir / "run" / CHECKPOINT_NAME), "--in", str(bad),
                 "--out", str(tmp_path / "o.wav")]) == 1
    assert "M2L2" in capsys.readouterr().err


def test_ablate_equal_latent_sizes(workdir, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(workdir / "tiny.json"), "--data", str(workdir / "data"),
                 "--out", str(out), "--steps", "2"]) == 0
    report = json.loads((out / "ablation.json").read_text())
    v = report["variants"]
    assert v["summary"]["latent_file_bytes"] == v["ordered"]["latent_file_bytes"]
    assert v["summary"]["fingerprint"] != v["ordered"]["fingerprint"]
    assert (out / "summary" / "clip0.latents").stat().st_size == (out / "ordered" / "clip0.latents").stat().st_size
