"""Overfit the toy preset on a synthetic corpus and record loss drop and SI-SDR.

    python3 scripts/toy_overfit.py --out runs/toy --json results/toy_overfit.json
"""
import argparse
import json
import logging
from pathlib import Path

from m2l2.config import load_config, preset
from m2l2.data import ChunkPairDataset
from m2l2.experiment import overfit_report, train_loop
from m2l2.toy import make_toy_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", help="JSON config (default: toy preset)")
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--clips", type=int, default=4)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--json", help="also write the report here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config) if args.config else preset("toy")
    out = Path(args.out)
    make_toy_corpus(out / "data", n_clips=args.clips, sample_rate=cfg.spectral.sample_rate)
    data = ChunkPairDataset(out / "data", cfg)
    state = train_loop(cfg, data, out / "run", steps=args.steps)
    report = {"fingerprint": cfg.fingerprint(), **overfit_report(state, data, out / "run")}
    text = json.dumps(report, indent=2)
    print(text)
    if args.json:
        Path(args.json).write_text(text + "\n")


if __name__ == "__main__":
    main()
