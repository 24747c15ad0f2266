"""Training loop with checkpointing and NDJSON metrics, plus the variant ablation."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .codec import DecodeOptions, decode, encode, save_latents
from .config import ModelConfig
from .data import ChunkPairDataset
from .evaluation import LogMelEmbedder, audio_stats, frechet_distance
from .spectral import WaveformSegment
from .training import TrainState, init_state, train_step

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.m2l2ckpt"
METRICS_NAME = "metrics.ndjson"


def train_loop(cfg: ModelConfig, data: ChunkPairDataset, out_dir: str | Path, resume: bool = False,
               steps: int | None = None, checkpoint_every: int = 500) -> TrainState:
    """Train until ``total_iterations`` (or ``steps`` more iterations), checkpointing to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_NAME
    if resume and ckpt.exists():
        state = load_checkpoint(ckpt, expect=cfg)
        log.info("resumed from %s at iteration %d", ckpt, state.iteration)
    else:
        state = init_state(cfg)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    stop = cfg.train.total_iterations
    if steps is not None:
        stop = min(stop, state.iteration + steps)
    t0 = time.time()
    with open(out / METRICS_NAME, "a") as metrics:
        while state.iteration < stop:
            m = train_step(state, data.batch(state.iteration))
            m["wall_time"] = time.time() - t0
            metrics.write(json.dumps(m) + "\n")
            if state.iteration % checkpoint_every == 0:
                metrics.flush()
                save_checkpoint(state, ckpt)
    save_checkpoint(state, ckpt)
    return state


def read_metrics(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def running_mean_drop(losses: list[float], head: int = 10, tail: int = 100) -> float:
    """Relative drop of the final running mean versus the mean of the first ``head`` steps."""
    first = float(np.mean(losses[:head]))
    last = float(np.mean(losses[-tail:]))
    return (first - last) / first


def overfit_report(state: TrainState, data: ChunkPairDataset, out_dir: str | Path, clip: int = 0,
                   sigma_cond: float | None = None, seed: int = 0, drop_window: int = 200) -> dict:
    """Loss drop plus a roundtrip of one training clip with the EMA weights.

    ``loss_drop`` uses the first ``drop_window`` iterations, where the rung count
    is still constant; once N doubles the 1/dsigma weight rescales the loss, so
    ``loss_drop_full`` over the whole run is reported but not comparable.
    """
    from .codec import roundtrip

    cfg = state.cfg
    rows = read_metrics(Path(out_dir) / METRICS_NAME)
    losses = [m["loss"] for m in rows]
    w = WaveformSegment(data.clips[clip], cfg.spectral.sample_rate)
    opts = DecodeOptions(sigma_cond=cfg.decode.sigma_cond if sigma_cond is None else sigma_cond, seed=seed)
    _, metrics = roundtrip(w, state.ema.eval(), opts)
    return {
        "iterations": state.iteration,
        "first10_loss_mean": float(np.mean(losses[:10])),
        "final100_loss_mean": float(np.mean(losses[-100:])),
        "loss_drop": running_mean_drop(losses[:drop_window]),
        "loss_drop_full": running_mean_drop(losses),
        "train_seconds": rows[-1]["wall_time"],
        "clip": data.names[clip],
        **metrics,
    }


def ablate(cfg: ModelConfig, data: ChunkPairDataset, out_dir: str | Path, steps: int | None = None,
           sigma_cond: float | None = None) -> dict:
    """Train the summary and ordered variants with identical seeds and compare them."""
    out = Path(out_dir)
    sr = cfg.spectral.sample_rate
    clips = data.clips
    embedder = LogMelEmbedder()
    ref = audio_stats(clips, sr, embedder)
    report: dict = {"embedder": embedder.name, "variants": {}}
    for variant in ("summary", "ordered"):
        vcfg = cfg.replace(arch={"variant": variant})
        vdir = out / variant
        state = train_loop(vcfg, data, vdir, steps=steps)
        model = state.ema.eval()
        opts = DecodeOptions(sigma_cond=vcfg.decode.sigma_cond if sigma_cond is None else sigma_cond)
        seqs = [encode(WaveformSegment(c, sr), model) for c in clips]
        save_latents(vdir / "clip0.latents", seqs[0])
        rec = [decode(s, model, opts).samples for s in seqs]
        losses = [m["loss"] for m in read_metrics(vdir / METRICS_NAME)]
        report["variants"][variant] = {
            "final_loss_mean": float(np.mean(losses[-100:])),
            "fd": frechet_distance(ref, audio_stats(rec, sr, embedder)),
            "latent_file_bytes": (vdir / "clip0.latents").stat().st_size,
            "fingerprint": vcfg.fingerprint(),
        }
    (out / "ablation.json").write_text(json.dumps(report, indent=2))
    return report
