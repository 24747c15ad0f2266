"""Fréchet distance of round-tripped audio across a sigma_cond grid.

    python3 scripts/sigma_sweep.py --ckpt runs/toy/run/checkpoint.m2l2ckpt --data runs/toy/data
"""
import argparse
import json

from m2l2.checkpoint import load_inference_model
from m2l2.data import ChunkPairDataset
from m2l2.evaluation import EMBEDDERS, SWEEP_GRID, sigma_cond_sweep, write_sweep_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--data", required=True)
    ap.add_argument("--grid", default=",".join(str(g) for g in SWEEP_GRID))
    ap.add_argument("--embedder", choices=sorted(EMBEDDERS), default="logmel")
    ap.add_argument("--csv", default="sweep.csv")
    args = ap.parse_args()

    model = load_inference_model(args.ckpt)
    clips = ChunkPairDataset(args.data, model.cfg).clips
    grid = [float(g) for g in args.grid.split(",")]
    rows = sigma_cond_sweep(clips, model, grid, EMBEDDERS[args.embedder]())
    write_sweep_csv(args.csv, rows)
    best = min(rows, key=lambda r: r["fd"])
    print(json.dumps({"rows": rows, "best_sigma_cond": best["sigma_cond"]}, indent=2))


if __name__ == "__main__":
    main()
