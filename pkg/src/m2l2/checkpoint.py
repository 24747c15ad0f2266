"""Binary checkpoint format.

Layout::

    b"M2L2CKPT" | u16 version | u64 manifest length | manifest JSON | payload

The manifest holds the config, its fingerprint, the iteration counter, the
optimizer hyperparameters and a tensor directory (name -> dtype, shape, byte
offset into the payload).  Every tensor is stored as little-endian float32.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .training import TrainState, init_state

MAGIC = b"M2L2CKPT"
VERSION = 1
_PREFIX = struct.Struct("<HQ")


class CheckpointError(RuntimeError):
    pass


def _tensors(state: TrainState) -> dict[str, torch.Tensor]:
    out = {f"model.{k}": v for k, v in state.model.state_dict().items()}
    out.update({f"ema.{k}": v for k, v in state.ema.state_dict().items()})
    for idx, st in state.optimizer.state_dict()["state"].items():
        for key, v in st.items():
            out[f"optim.{idx}.{key}"] = torch.as_tensor(v)
    return out


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Write atomically (temp file + rename) so readers never see a partial file."""
    path = Path(path)
    directory: dict[str, dict] = {}
    blobs = []
    offset = 0
    for name, t in _tensors(state).items():
        # np.ascontiguousarray would promote 0-d tensors (optimizer step counters) to 1-d
        arr = np.asarray(t.detach().cpu().numpy(), dtype="<f4").copy(order="C")
        directory[name] = {"dtype": "float32", "shape": list(t.shape), "offset": offset, "nbytes": arr.nbytes}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    groups = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items() if k != "params"}
              for g in state.optimizer.state_dict()["param_groups"]]
    manifest = {
        "config": state.cfg.to_dict(),
        "fingerprint": state.cfg.fingerprint(),
        "iteration": state.iteration,
        "optimizer": {"param_groups": groups},
        "tensors": directory,
        "payload_bytes": offset,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + _PREFIX.pack(VERSION, len(mbytes)) + mbytes)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)


def read_manifest(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an M2L2 checkpoint")
    head = len(MAGIC) + _PREFIX.size
    if len(raw) < head:
        raise CheckpointError(f"{path}: truncated header")
    version, mlen = _PREFIX.unpack(raw[len(MAGIC): head])
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    try:
        manifest = json.loads(raw[head: head + mlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    payload = raw[head + mlen:]
    if len(payload) != manifest.get("payload_bytes"):
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, manifest says {manifest.get('payload_bytes')} "
            "(truncated or corrupt file)")
    return manifest, payload


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> TrainState:
    """Rebuild a :class:`TrainState`; ``expect`` enforces a matching config fingerprint."""
    manifest, payload = read_manifest(path)
    try:
        cfg = ModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid config in manifest: {e}") from e
    if cfg.fingerprint() != manifest.get("fingerprint"):
        raise CheckpointError(f"{path}: stored fingerprint does not match its config")
    if expect is not None and expect.fingerprint() != cfg.fingerprint():
        raise CheckpointError(
            f"{path}: config fingerprint {cfg.fingerprint()} does not match expected {expect.fingerprint()}")

    tensors = {}
    for name, meta in manifest["tensors"].items():
        start, n = meta["offset"], meta["nbytes"]
        if meta["dtype"] != "float32" or start + n > len(payload):
            raise CheckpointError(f"{path}: bad tensor entry {name}")
        arr = np.frombuffer(payload[start: start + n], dtype="<f4").reshape(meta["shape"])
        tensors[name] = torch.from_numpy(arr.copy())

    state = init_state(cfg)
    try:
        state.model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
        state.ema.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("ema.")})
    except RuntimeError as e:
        raise CheckpointError(f"{path}: tensor directory does not match the model: {e}") from e
    opt_state: dict[int, dict] = {}
    for k, v in tensors.items():
        if k.startswith("optim."):
            _, idx, key = k.split(".", 2)
            opt_state.setdefault(int(idx), {})[key] = v
    groups = manifest["optimizer"]["param_groups"]
    sd = state.optimizer.state_dict()
    for g, saved in zip(sd["param_groups"], groups):
        g.update({k: (tuple(v) if k == "betas" else v) for k, v in saved.items()})
    sd["state"] = opt_state
    state.optimizer.load_state_dict(sd)
    state.iteration = int(manifest["iteration"])
    return state


def load_inference_model(path: str | Path, use_ema: bool = True):
    state = load_checkpoint(path)
    model = state.ema if use_ema else state.model
    return model.eval()
