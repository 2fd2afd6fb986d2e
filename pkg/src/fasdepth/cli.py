"""Command line entry point: simulate, train, eval, check.

Exit codes: 0 success, 1 a check or bound failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import geometry as geo
from .io import load_checkpoint, save_checkpoint, write_loss_csv
from .metrics import compute_metrics, format_table, read_scores, reports_csv, sweep_thresholds, write_scores

DEFAULT_SEED = 0
log = logging.getLogger("fasdepth")


class UsageError(Exception):
    """Bad input: reported on stderr with exit code 2."""


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    try:
        scene = geo.load_scene(args.scene)
    except (OSError, ValueError) as exc:
        raise UsageError(f"invalid scene config {args.scene}: {exc}") from None
    obs = geo.observe(scene)
    estimates = geo.estimate_relative_depth(obs)
    verdict = geo.classify_scene(estimates, assume_no_pss=args.assume_no_pss) if len(estimates) > 1 else "inconclusive"
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / (Path(args.scene).stem + "_sweep.csv")
    csv_path.write_text(geo.sweep_csv(obs, estimates))
    print(f"verdict: {verdict}")
    print(f"sweep written to {csv_path}")
    return 0


# --------------------------------------------------------------------------
# train

_TRAIN_KEYS = {"preset", "steps", "lr", "batch_size", "clips", "eval_clips", "reduction", "alpha", "beta",
               "n_frames", "interval", "seed"}


def _read_train_config(path) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if cp.sections() != ["train"]:
        raise UsageError(f"config must contain exactly one [train] section, got {cp.sections()}")
    raw = dict(cp["train"])
    unknown = set(raw) - _TRAIN_KEYS
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    return raw


def _train_settings(args):
    from .trainer import TrainConfig

    raw = _read_train_config(args.config)
    for key in ("steps", "seed", "clips", "lr"):
        if getattr(args, key) is not None:
            raw[key] = str(getattr(args, key))
    preset = raw.pop("preset", "desk")
    if preset not in ("desk", "full"):
        raise UsageError(f"preset must be 'desk' or 'full', got {preset!r}")
    clips = int(raw.pop("clips", 8))
    eval_clips = int(raw.pop("eval_clips", 0))
    types = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for k, v in raw.items():
        kind = types[k]
        kwargs[k] = v if kind == "str" else (int(v) if kind == "int" else float(v))
    kwargs.setdefault("seed", DEFAULT_SEED)
    try:
        cfg = getattr(TrainConfig, preset)(args.stage, **kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    if clips < 2 and args.stage == 2:
        raise UsageError("stage 2 needs at least 2 clips")
    return cfg, clips, eval_clips


def cmd_train(args) -> int:
    from . import trainer
    from .backbone import Backbone, BackboneConfig
    from .stpm import Stpm, StpmConfig
    from .synth import SynthConfig, make_dataset

    try:
        cfg, n_clips, n_eval = _train_settings(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out_dir)
    synth = SynthConfig(n_frames=cfg.n_frames, interval=cfg.interval)
    bcfg = BackboneConfig.desk()

    if args.stage == 1:
        backbone = Backbone.create(bcfg, seed=cfg.seed)
        clips = make_dataset(n_clips, cfg.seed, synth)
        backbone, curve = trainer.train_stage1(cfg, backbone, trainer.stage1_pairs(clips))
        bin_path, _ = save_checkpoint(out / "stage1", backbone.params, {"stage": 1, "seed": cfg.seed})
        write_loss_csv(out / "stage1_loss.csv", curve)
    else:
        if args.checkpoint is None:
            raise UsageError("stage 2 needs --checkpoint pointing at a stage-1 checkpoint")
        stem = Path(args.checkpoint).with_suffix("")
        if not stem.with_suffix(".bin").exists() or not stem.with_suffix(".json").exists():
            raise UsageError(f"stage-1 checkpoint not found: {stem}.bin / {stem}.json")
        params, _ = load_checkpoint(stem)
        backbone = Backbone(bcfg, params)
        stpm = Stpm.create(StpmConfig.desk(bcfg.channels, bcfg.depth_size), seed=cfg.seed)
        clips = make_dataset(n_clips, cfg.seed, synth)
        stpm, curve = trainer.train_stage2(cfg, backbone, stpm, clips)
        bin_path, _ = save_checkpoint(out / "stage2", stpm.params, {"stage": 2, "seed": cfg.seed})
        write_loss_csv(out / "stage2_loss.csv", curve)
        if n_eval:
            held_out = make_dataset(n_eval, cfg.seed + 1, synth)
            with open(out / "scores.csv", "w", newline="") as fh:
                write_scores(trainer.score_records(backbone, stpm, held_out, cfg.beta), fh)
    first, last = curve[0]["overall"], curve[-1]["overall"]
    ratio = first / last if last > 0 else float("inf")
    print(f"stage {args.stage}: {cfg.steps} steps, loss {first:.6g} -> {last:.6g} (ratio {ratio:.3g})")
    print(f"checkpoint written to {bin_path}")
    return 0


# --------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    try:
        with open(args.scores, newline="") as fh:
            records = read_scores(fh)
        if args.sweep:
            sweep = sweep_thresholds(records)
            if sweep.degenerate:
                raise ValueError("scores take a single value; no threshold to sweep")
            reports = [r for _, r in sweep.points]
            chosen = sweep.eer_report
            compute_metrics(records, sweep.eer_threshold)
        else:
            chosen = compute_metrics(records, args.threshold)
            reports = [chosen]
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    print(format_table(chosen))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(reports_csv(reports))
    if args.max_acer is not None and chosen.acer > args.max_acer:
        print(f"ACER {chosen.acer:.4g}% exceeds bound {args.max_acer:.4g}%", file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    from .checks import run_suites

    try:
        summary = run_suites(args.suites)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    text = json.dumps(summary, indent=1)
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)
    return 0 if summary["passed"] else 1


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fasdepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a geometry scene and print a verdict")
    p.add_argument("scene", help="scene file with a [scene] section")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--assume-no-pss", action="store_true",
                   help="treat a steady ratio as live instead of inconclusive")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="toy two-stage training on synthetic clips")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", help="file with a [train] section")
    p.add_argument("--checkpoint", help="stage-1 checkpoint stem (stage 2 only)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--clips", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out-dir", default="runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="APCER/BPCER/ACER and FRR/FAR/HTER from a score file")
    p.add_argument("scores")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--threshold", type=float)
    g.add_argument("--sweep", action="store_true", help="sweep thresholds, report the equal-error point")
    p.add_argument("--max-acer", type=float, help="exit 1 if ACER (percent) exceeds this")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run invariant suites")
    p.add_argument("suites", nargs="*", default=["all"])
    p.add_argument("--json", help="also write the summary here")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fasdepth: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
