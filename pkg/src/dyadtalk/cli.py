"""Command-line surface: dataset synthesis, training, inference, evaluation,
gradient checking, and plot export.

Exit codes: 0 success, 1 validation/input error, 2 unexpected runtime failure.
Every run echoes its fully resolved configuration as one JSON line.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, ModelConfig, TrainConfig, load_config_file
from .datamodel import (
    DatasetManifest,
    ValidationError,
    denormalize_motion,
    normalize_motion,
    read_clip,
    read_motion_file,
    write_motion_file,
)
from .metrics import evaluate_suite
from .rendering import render_plots
from .synthgen import generate_dataset
from .training import (
    CheckpointError,
    gradcheck,
    load_checkpoint,
    save_checkpoint,
    train,
)

THREADS_ENV = "DYADTALK_NUM_THREADS"

MODEL_PRESETS = {"full": ModelConfig.full, "toy": ModelConfig.toy, "tiny": ModelConfig.tiny}


def _echo_config(command: str, resolved: dict, out_dir: Path | None = None) -> None:
    payload = {"command": command, **resolved}
    print("config: " + json.dumps(payload, sort_keys=True))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _parse_splits(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValidationError("splits: expected three comma-separated fractions")
    return parts[0], parts[1], parts[2]


def cmd_synth_data(args) -> int:
    out_dir = Path(args.out_dir)
    resolved = {"seed": args.seed, "n_clips": args.n_clips, "splits": args.splits,
                "duration_s": args.duration_s, "noise_std": args.noise_std,
                "out_dir": str(out_dir)}
    _echo_config("synth-data", resolved, out_dir)
    manifest = generate_dataset(args.seed, args.n_clips, _parse_splits(args.splits),
                                out_dir, duration_s=args.duration_s,
                                noise_std=args.noise_std)
    counts = {k: len(v) for k, v in manifest.split.items()}
    print(f"wrote {len(manifest.clips)} clips to {out_dir} (splits: {counts})")
    return 0


def _resolve_train_configs(args) -> tuple[ModelConfig, TrainConfig]:
    if args.model_config:
        model_cfg = load_config_file(args.model_config, ModelConfig)
    else:
        model_cfg = MODEL_PRESETS[args.preset]()
    if args.train_config:
        train_cfg = load_config_file(args.train_config, TrainConfig)
    elif args.preset == "toy":
        train_cfg = TrainConfig.toy()
    else:
        train_cfg = TrainConfig()
    overrides = {}
    for flag in ("epochs", "batch_size", "learning_rate", "seed", "window_frames"):
        value = getattr(args, flag)
        if value is not None:
            overrides[flag] = value
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    model_cfg, train_cfg = _resolve_train_configs(args)
    _echo_config("train", {"manifest": args.manifest,
                           "model_config": model_cfg.to_dict(),
                           "train_config": train_cfg.to_dict(),
                           "out_dir": str(out_dir)}, out_dir)
    manifest = DatasetManifest.load(args.manifest)
    ckpt = train(manifest, model_cfg, train_cfg, out_dir=out_dir, quiet=args.quiet)
    ckpt_path = save_checkpoint(ckpt, out_dir / "checkpoint.dt")
    print(f"best epoch {ckpt.epoch} "
          f"(val loss {ckpt.val_loss_history[ckpt.epoch]:.6f}); "
          f"checkpoint: {ckpt_path}")
    return 0


def cmd_infer(args) -> int:
    out_dir = Path(args.out_dir)
    _echo_config("infer", {"checkpoint": args.checkpoint, "manifest": args.manifest,
                           "split": args.split, "clip_id": args.clip_id,
                           "out_dir": str(out_dir)}, out_dir)
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    manifest = DatasetManifest.load(args.manifest)
    ids = [args.clip_id] if args.clip_id else manifest.clip_ids(args.split)
    if not ids:
        raise ValidationError(f"split {args.split!r} has no clips")
    stats = manifest.norm_stats
    for cid in ids:
        clip = manifest.read_clip(cid)
        pred_norm = model.predict(clip.audio_a, normalize_motion(clip.motion_a, stats),
                                  clip.audio_b)
        pred = denormalize_motion(pred_norm, stats)
        write_motion_file(out_dir / f"{cid}.pred", pred)
    print(f"wrote {len(ids)} predictions to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    out_dir = Path(args.out_dir)
    _echo_config("eval", {"manifest": args.manifest, "pred_dir": args.pred_dir,
                          "split": args.split, "out_dir": str(out_dir)}, out_dir)
    manifest = DatasetManifest.load(args.manifest)
    pred_dir = Path(args.pred_dir)
    ids = manifest.clip_ids(args.split)
    if not ids:
        raise ValidationError(f"split {args.split!r} has no clips")
    gen_b, gt_b, motion_a = {}, {}, {}
    missing = [cid for cid in ids if not (pred_dir / f"{cid}.pred.json").exists()]
    if missing:
        raise ValidationError("predictions missing for clips: " + ", ".join(missing))
    layout = None
    for cid in ids:
        clip = manifest.read_clip(cid)
        pred = read_motion_file(pred_dir / f"{cid}.pred")
        gen_b[cid] = pred.values
        gt_b[cid] = clip.motion_b.values
        motion_a[cid] = clip.motion_a.values
        layout = clip.motion_b.layout
    report = evaluate_suite(gen_b, gt_b, motion_a, layout)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / "report.json")
    report.to_csv(out_dir / "report.csv")
    for part, pm in report.partitions.items():
        print(f"{part:5s} fd {pm.fd:.6g}  p_fd {pm.p_fd:.6g}  mse {pm.mse:.6g}  "
              f"sid {pm.sid:.4f} (k={pm.sid_k})  rpcc {pm.rpcc:.6g}")
    return 0


def cmd_gradcheck(args) -> int:
    _echo_config("gradcheck", {"seed": args.seed, "frames": args.frames})
    report = gradcheck(seed=args.seed, frames=args.frames)
    print(report.format())
    return 0 if report.passed else 1


def cmd_render(args) -> int:
    out_dir = Path(args.out_dir)
    _echo_config("render", {"clip_dir": args.clip_dir, "clip_id": args.clip_id,
                            "pred": args.pred, "out_dir": str(out_dir)}, out_dir)
    clip = None
    if args.clip_dir and args.clip_id:
        clip = read_clip(args.clip_dir, args.clip_id)
    if args.pred:
        motion = read_motion_file(args.pred)
        gt = clip.motion_b if clip is not None else None
        name = args.clip_id or Path(args.pred).name
    elif clip is not None:
        motion, gt, name = clip.motion_b, None, args.clip_id
    else:
        raise ValidationError("render: need --pred and/or --clip-dir with --clip-id")
    paths = render_plots(motion, out_dir, name, gt=gt, clip=clip)
    print(f"wrote {len(paths)} files to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyadtalk",
        description="Dual-speaker talking-head pipeline: synthesize dyadic data, "
                    "train the blendshape predictor, run inference, and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dyadic dataset")
    p.add_argument("--seed", type=int, required=True, help="dataset seed")
    p.add_argument("--n-clips", type=int, required=True, help="number of clips")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--splits", default="0.8,0.1,0.1",
                   help="train,test,ood fractions (default 0.8,0.1,0.1)")
    p.add_argument("--duration-s", type=float, default=10.0,
                   help="clip duration in seconds (default 10)")
    p.add_argument("--noise-std", type=float, default=0.01,
                   help="background/motion noise level (default 0.01)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the model on a manifest")
    p.add_argument("--manifest", required=True, help="path to manifest.json")
    p.add_argument("--out-dir", required=True, help="checkpoint/log directory")
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="toy",
                   help="model preset when no --model-config is given (default toy)")
    p.add_argument("--model-config", help="JSON file with ModelConfig fields")
    p.add_argument("--train-config", help="JSON file with TrainConfig fields")
    p.add_argument("--epochs", type=int, help="override epochs")
    p.add_argument("--batch-size", type=int, help="override batch size")
    p.add_argument("--learning-rate", type=float, help="override learning rate")
    p.add_argument("--seed", type=int, help="override training seed")
    p.add_argument("--window-frames", type=int, help="override window length")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict B motion for a split or one clip")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint file")
    p.add_argument("--manifest", required=True, help="path to manifest.json")
    p.add_argument("--split", default="test", help="split to infer (default test)")
    p.add_argument("--clip-id", help="single clip id instead of a split")
    p.add_argument("--out-dir", required=True, help="prediction output directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--manifest", required=True, help="path to manifest.json")
    p.add_argument("--pred-dir", required=True, help="directory with <id>.pred files")
    p.add_argument("--split", default="test", help="split to evaluate (default test)")
    p.add_argument("--out-dir", required=True, help="report output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0, help="seed (default 0)")
    p.add_argument("--frames", type=int, default=24, help="sequence length (default 24)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("render", help="plot a clip and/or a prediction")
    p.add_argument("--clip-dir", help="directory holding the clip files")
    p.add_argument("--clip-id", help="clip id inside --clip-dir")
    p.add_argument("--pred", help="prediction file stem (without .f32/.json)")
    p.add_argument("--out-dir", required=True, help="plot output directory")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    torch.set_num_threads(int(os.environ.get(THREADS_ENV, "1")))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ValidationError, ConfigError, CheckpointError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001  - runtime failure boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
