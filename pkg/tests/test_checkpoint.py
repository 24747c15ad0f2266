import struct

import pytest
import torch

from m2l2.checkpoint import MAGIC, CheckpointError, load_checkpoint, load_inference_model, save_checkpoint
from m2l2.training import init_state, train_step

from conftest import random_chunks, tiny_cfg


def _trained(cfg, steps=2):
    state = init_state(cfg)
    for k in range(steps):
        train_step(state, 0.5 * random_chunks(cfg, 2, 2, seed=k))
    return state


def test_roundtrip_bit_exact(tmp_path):
    cfg = tiny_cfg()
    state = _trained(cfg)
    path = tmp_path / "c.m2l2ckpt"
    save_checkpoint(state, path)
    back = load_checkpoint(path, expect=cfg)
    assert back.iteration == state.iteration
    for mod in ("model", "ema"):
        a, b = getattr(state, mod).state_dict(), getattr(back, mod).state_dict()
        assert a.keys() == b.keys()
        assert all(torch.equal(a[k], b[k]) for k in a)
    sa, sb = state.optimizer.state_dict(), back.optimizer.state_dict()
    for idx, st in sa["state"].items():
        for key, v in st.items():
            assert torch.equal(torch.as_tensor(v).float(), torch.as_tensor(sb["state"][idx][key]).float())
    assert sa["param_groups"][0]["lr"] == sb["param_groups"][0]["lr"]


def test_header_layout(tmp_path):
    path = tmp_path / "c.m2l2ckpt"
    save_checkpoint(init_state(tiny_cfg()), path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    version, mlen = struct.unpack("<HQ", raw[8:18])
    assert version == 1 and mlen > 0
    assert not (tmp_path / "c.m2l2ckpt.tmp").exists()


def test_truncated_payload(tmp_path):
    path = tmp_path / "c.m2l2ckpt"
    save_checkpoint(init_state(tiny_cfg()), path)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(path)


def test_version_and_magic_errors(tmp_path):
    path = tmp_path / "c.m2l2ckpt"
    save_checkpoint(init_state(tiny_cfg()), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:8] + struct.pack("<H", 2) + raw[10:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_corrupt_manifest(tmp_path):
    path = tmp_path / "c.m2l2ckpt"
    save_checkpoint(init_state(tiny_cfg()), path)
    raw = bytearray(path.read_bytes())
    raw[18] = ord("#")
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(path)


def test_fingerprint_mismatch(tmp_path):
    path = tmp_path / "c.m2l2ckpt"
    save_checkpoint(init_state(tiny_cfg()), path)
    with pytest.raises(CheckpointError, match="fingerprint"):
        load_checkpoint(path, expect=tiny_cfg(train={"seed": 7}))


def test_resume_matches_uninterrupted(tmp_path):
    cfg = tiny_cfg()
    batches = [0.5 * random_chunks(cfg, 2, 2, seed=k) for k in range(4)]
    full = init_state(cfg)
    losses = [train_step(full, b)["loss"] for b in batches]

    part = init_state(cfg)
    for b in batches[:3]:
        train_step(part, b)
    save_checkpoint(part, tmp_path / "c.m2l2ckpt")
    resumed = load_checkpoint(tmp_path / "c.m2l2ckpt")
    assert train_step(resumed, batches[3])["loss"] == losses[3]
    for a, b in zip(full.model.parameters(), resumed.model.parameters()):
        assert torch.equal(a, b)


def test_inference_model_picks_weights(tmp_path):
    state = _trained(tiny_cfg())
    save_checkpoint(state, tmp_path / "c.m2l2ckpt")
    ema = load_inference_model(tmp_path / "c.m2l2ckpt")
    raw = load_inference_model(tmp_path / "c.m2l2ckpt", use_ema=False)
    assert not ema.training
    p_ema, p_raw = next(ema.parameters()), next(raw.parameters())
    assert torch.equal(p_ema, next(state.ema.parameters()))
    assert torch.equal(p_raw, next(state.model.parameters()))
