"""Command-line surface for the whole pipeline.

Subcommands: synth-data, preprocess, train, eval, aggregate,
inspect-checkpoint. Exit codes: 0 success, 1 usage/config error, 2
data or file-format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import read_clips, read_manifest, write_clips
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    EmptyInputError,
    EmptyOutputError,
    FormatError,
    GraphError,
    NumericError,
    ShapeError,
)
from .model import MultiModalClassifier
from .phq import compute_metrics, gender_split_report
from .synthetic import generate_synthetic_corpus
from .tensorio import load_checkpoint, save_checkpoint
from .training import aggregate_predictions, evaluate_clips, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="depest", description="Multi-modal depression estimation pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    sd = sub.add_parser("synth-data", help="generate a synthetic corpus", parents=[], add_help=True)
    sd.add_argument("--out-dir", required=True)
    sd.add_argument("--seed", type=int, default=0)
    sd.add_argument("--participants", type=int, default=8)
    sd.add_argument("--duration-s", type=float, default=120.0)
    sd.add_argument("--depressed-fraction", type=float, default=0.5)

    pp = sub.add_parser("preprocess", help="manifest -> clip bundles")
    pp.add_argument("--manifest", required=True)
    pp.add_argument("--out-dir", required=True)
    pp.add_argument("--config")

    tr = sub.add_parser("train", help="train on preprocessed clips")
    tr.add_argument("--clips-dir", required=True)
    tr.add_argument("--out-dir", required=True)
    tr.add_argument("--config")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--modality", choices=["a", "v", "t", "av", "avt"])
    tr.add_argument("--fusion", choices=["mult", "concat", "median", "max", "sum", "mean", "atten", "subatten"])
    tr.add_argument("--sam-rho", type=float)
    tr.add_argument("--no-gb", action="store_true", help="disable gender balancing in the sampler")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--stop-accuracy", type=float)

    ev = sub.add_parser("eval", help="clip-level metrics for a checkpoint")
    ev.add_argument("--clips-dir", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config")
    ev.add_argument("--out-dir")

    ag = sub.add_parser("aggregate", help="participant-level + gender-split report")
    ag.add_argument("--clips-dir", required=True)
    ag.add_argument("--checkpoint", required=True)
    ag.add_argument("--config")
    ag.add_argument("--out-dir")

    ic = sub.add_parser("inspect-checkpoint", help="print checkpoint contents")
    ic.add_argument("--checkpoint", required=True)
    return p


def _load_cfg(args, **extra) -> dict:
    overrides = {}
    for attr, key in (("seed", "seed"), ("modality", "modality"), ("fusion", "fusion"), ("sam_rho", "sam_rho"), ("epochs", "epochs")):
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "no_gb", False):
        overrides["gender_balance"] = 0
    overrides.update(extra)
    return cfgmod.parse_config(getattr(args, "config", None), overrides)


def _restore_model(checkpoint_path, cfg: dict) -> MultiModalClassifier:
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.config_hash != cfgmod.config_hash(cfg):
        raise ConfigError(
            f"checkpoint was trained under a different config "
            f"(checkpoint {ckpt.config_hash[:12]}, current {cfgmod.config_hash(cfg)[:12]}); "
            f"pass the matching --config"
        )
    model = MultiModalClassifier(cfgmod.model_config(cfg), rng=np.random.default_rng(cfg["seed"]))
    model.load_state(ckpt.state, strict=True)
    return model


def cmd_synth_data(args) -> int:
    manifest = generate_synthetic_corpus(
        args.out_dir,
        n_participants=args.participants,
        seed=args.seed,
        duration_s=args.duration_s,
        depressed_fraction=args.depressed_fraction,
    )
    print(f"wrote corpus manifest: {manifest}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _load_cfg(args)
    entries = read_manifest(args.manifest)
    from .data import preprocess_session

    total = 0
    for entry in entries:
        clips = preprocess_session(entry, cfg)
        write_clips(args.out_dir, clips)
        total += len(clips)
    print(f"wrote {total} clip bundles from {len(entries)} participants to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    clips = read_clips(args.clips_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = MultiModalClassifier(cfgmod.model_config(cfg), rng=np.random.default_rng(cfg["seed"]))
    with open(out_dir / "epoch_log.txt", "w") as log_fh:
        history = train(
            model,
            clips,
            musdl_cfg=cfgmod.musdl_config(cfg),
            sam_cfg=cfgmod.sam_config(cfg),
            epochs=cfg["epochs"],
            batch_size=cfg["batch_size"],
            sampler_mode=cfg["sampler_mode"],
            gender_balance=bool(cfg["gender_balance"]),
            dynamic_weights=bool(cfg["dynamic_weights"]),
            seed=cfg["seed"],
            stop_accuracy=args.stop_accuracy,
            log_fh=log_fh,
        )
    save_checkpoint(
        out_dir / "model.ckpt",
        epoch=history[-1].epoch,
        config_text=cfgmod.canonical_text(cfg),
        state=model.state(),
    )
    last = history[-1]
    print(f"trained {last.epoch} epochs; loss {last.loss:.4f}; clip accuracy {last.clip_accuracy:.4f}")
    print(f"checkpoint: {out_dir / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    clips = read_clips(args.clips_dir)
    model = _restore_model(args.checkpoint, cfg)
    ev = evaluate_clips(model, clips, cfgmod.musdl_config(cfg), cfg["batch_size"])

    from .phq import derive_phq

    pred_bin = [r.binary for r in ev.records]
    pred_score = [r.score for r in ev.records]
    true_records = [derive_phq(c.phq_subscores) for c in clips]
    rep = compute_metrics(pred_bin, [r.binary for r in true_records], pred_score, [r.score for r in true_records])

    lines = ["[clip-level]"] + rep.lines()
    text = "\n".join(lines)
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "clip_metrics.txt").write_text(text + "\n")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    cfg = _load_cfg(args)
    clips = read_clips(args.clips_dir)
    model = _restore_model(args.checkpoint, cfg)
    truth, preds = aggregate_predictions(model, clips, cfgmod.musdl_config(cfg), cfg["batch_size"])
    report = gender_split_report(truth, preds)
    text = "\n".join(report.lines())
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "participant_report.txt").write_text(text + "\n")
    return EXIT_OK


def cmd_inspect_checkpoint(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    print(f"epoch {ckpt.epoch}")
    print(f"config sha256 {ckpt.config_hash}")
    print(f"tensors {len(ckpt.state)}")
    for name in sorted(ckpt.state):
        arr = ckpt.state[name]
        print(f"  {name} {list(arr.shape)}")
    return EXIT_OK


_COMMANDS = {
    "synth-data": cmd_synth_data,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "aggregate": cmd_aggregate,
    "inspect-checkpoint": cmd_inspect_checkpoint,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, DomainError, ShapeError, EmptyInputError, EmptyOutputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
