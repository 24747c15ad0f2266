"""Summary-token vs ordered-token latents at equal latent size.

    python3 scripts/ablation.py --out runs/ablation --steps 500
"""
import argparse
import json
from pathlib import Path

from m2l2.config import load_config, preset
from m2l2.data import ChunkPairDataset
from m2l2.experiment import ablate
from m2l2.toy import make_toy_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--data", help="directory of .wav files (default: a fresh toy corpus)")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--steps", type=int)
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else preset("toy")
    data_dir = Path(args.data) if args.data else Path(args.out) / "data"
    if not args.data:
        make_toy_corpus(data_dir, sample_rate=cfg.spectral.sample_rate)
    report = ablate(cfg, ChunkPairDataset(data_dir, cfg), args.out, steps=args.steps)
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
