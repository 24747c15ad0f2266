"""Command-line entry point: ``m2l2 <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .codec import CodecError, DecodeOptions, decode, encode, load_latents, roundtrip, save_latents
from .config import ConfigError, compression_report, load_config
from .data import ChunkPairDataset, DataError
from .evaluation import (EMBEDDERS, SWEEP_GRID, sigma_cond_sweep, write_sweep_csv, write_sweep_json)
from .experiment import ablate, train_loop
from .spectral import SpectralError, read_wav, write_wav
from .training import NonFiniteLossError

log = logging.getLogger("m2l2")


class UsageError(Exception):
    """Bad invocation (missing input files etc.); exits with status 2."""


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file or directory: {path}")
    return p


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("M2L2_SEED", 0))


def _model(args):
    state = load_checkpoint(_existing(args.ckpt))
    return (state.model if args.raw_weights else state.ema).eval()


def cmd_train(args) -> int:
    cfg = load_config(_existing(args.config))
    if args.seed is not None:
        cfg = cfg.replace(train={"seed": args.seed})
    data = ChunkPairDataset(_existing(args.data), cfg)
    state = train_loop(cfg, data, args.out, resume=args.resume, steps=args.steps,
                       checkpoint_every=args.checkpoint_every)
    print(f"trained to iteration {state.iteration}; checkpoint in {args.out}")
    return 0


def cmd_encode(args) -> int:
    model = _model(args)
    seq = encode(read_wav(_existing(args.inp)), model)
    save_latents(args.out, seq)
    print(f"{seq.n_chunks} chunks -> {args.out}")
    return 0


def cmd_decode(args) -> int:
    model = _model(args)
    seq = load_latents(_existing(args.inp))
    opts = DecodeOptions(sigma_cond=args.sigma_cond, seed=_seed(args))
    write_wav(args.out, decode(seq, model, opts))
    return 0


def cmd_roundtrip(args) -> int:
    model = _model(args)
    w = read_wav(_existing(args.inp))
    rec, metrics = roundtrip(w, model, DecodeOptions(sigma_cond=args.sigma_cond, seed=_seed(args)))
    write_wav(args.out, rec)
    if args.metrics:
        Path(args.metrics).write_text(json.dumps(metrics, indent=2))
    print(json.dumps(metrics))
    return 0


def cmd_sweep(args) -> int:
    model = _model(args)
    data = _existing(args.data)
    files = sorted(data.glob("*.wav")) if data.is_dir() else [data]
    audio = [read_wav(f).samples for f in files]
    grid = [float(g) for g in args.grid.split(",") if g.strip()]
    rows = sigma_cond_sweep(audio, model, grid, EMBEDDERS[args.embedder](), seed=_seed(args))
    write_sweep_csv(args.out, rows)
    if args.json:
        write_sweep_json(args.json, rows)
    for r in rows:
        print(f"sigma_cond={r['sigma_cond']:.2f}  fd={r['fd']:.6g}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(_existing(args.config))
    if args.seed is not None:
        cfg = cfg.replace(train={"seed": args.seed})
    data = ChunkPairDataset(_existing(args.data), cfg)
    report = ablate(cfg, data, args.out, steps=args.steps)
    print(json.dumps(report, indent=2))
    return 0


def cmd_info(args) -> int:
    from .autoencoder import M2L2Model, count_parameters

    cfg = load_config(_existing(args.config))
    info = {"fingerprint": cfg.fingerprint(), **compression_report(cfg),
            "tokens_per_chunk": cfg.tokens_per_chunk}
    if args.params:
        info["parameters"] = count_parameters(M2L2Model(cfg))
    print(json.dumps(info, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="m2l2", description="Summary-embedding consistency autoencoder")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def ckpt_args(sp, sigma=False):
        sp.add_argument("--ckpt", required=True)
        sp.add_argument("--raw-weights", action="store_true", help="use raw instead of EMA parameters")
        sp.add_argument("--seed", type=int, default=None)
        if sigma:
            sp.add_argument("--sigma-cond", type=float, default=0.4)

    sp = sub.add_parser("train")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--steps", type=int, default=None, help="stop after this many iterations")
    sp.add_argument("--checkpoint-every", type=int, default=500)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("encode")
    ckpt_args(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode")
    ckpt_args(sp, sigma=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("roundtrip")
    ckpt_args(sp, sigma=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--metrics", default=None)
    sp.set_defaults(func=cmd_roundtrip)

    ev = sub.add_parser("eval")
    evsub = ev.add_subparsers(dest="eval_command", required=True)
    sp = evsub.add_parser("sweep")
    ckpt_args(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--grid", default=",".join(str(g) for g in SWEEP_GRID))
    sp.add_argument("--out", required=True)
    sp.add_argument("--json", default=None)
    sp.add_argument("--embedder", choices=sorted(EMBEDDERS), default="logmel")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ablate")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("info")
    sp.add_argument("--config", required=True)
    sp.add_argument("--params", action="store_true")
    sp.set_defaults(func=cmd_info)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"m2l2: error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, CheckpointError, CodecError, DataError, SpectralError, NonFiniteLossError) as e:
        print(f"m2l2: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
