"""Command-line entry point: synth, train, eval, sweep, localize, gradcheck.

Exit codes: 0 ok, 1 usage, 2 runtime failure, 3 verification failure.
Every command writes ``<command>.config`` (the full resolved configuration)
next to its outputs. Flags are validated before anything is written.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as C
from . import evaluation as ev
from .numerics import checkpoint as ckpt
from .pipeline import (TrainingDiverged, VideoArrays, build_model, gradcheck_tiny, load_model,
                       train_stage1, train_stage2)
from .ssg import RecordError, read_dataset
from .synthgen import generate_dataset

log = logging.getLogger("proda")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("synth", "train", "eval", "sweep", "localize", "gradcheck")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="proda", description="Prompt-guided action disentanglement on scene-graph videos.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--dataset", help="directory with train.jsonl and val.jsonl")
    p.add_argument("--checkpoint", help="model checkpoint (.ckpt)")
    p.add_argument("--stage", type=int, choices=(1, 2),
                   help="train: 1 = stage 1 only, 2 = stage 1 then stage 2 (or stage 2 alone from --checkpoint)")
    p.add_argument("--theta", type=float, help="localize: single frame-weight threshold")
    p.add_argument("--iou", type=float, help="localize: single IoU threshold")
    p.add_argument("--injected", nargs="?", const="injected", choices=("injected", "clean", "both"),
                   help="SAP family for sweep/localize (bare flag = distractor-injected only)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def resolve(args) -> C.RunConfig:
    overrides = dict(C.parse_override(item) for item in args.set)
    for flag, key in (("seed", "seed"), ("out", "out"), ("dataset", "dataset"),
                      ("checkpoint", "checkpoint"), ("stage", "stage")):
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = val
    if args.theta is not None:
        overrides["thetas"] = str(args.theta)
    if args.iou is not None:
        overrides["ious"] = str(args.iou)
    if args.injected is not None:
        overrides["families"] = args.injected
    if args.config and not Path(args.config).is_file():
        raise C.ConfigError(f"config file not found: {args.config}")
    return C.load(args.config, overrides)


# -- commands ---------------------------------------------------------------------

def _out(cfg: C.RunConfig, command: str) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.atomic_write(out / f"{command}.config", cfg.echo())
    return out


def _load_split(cfg: C.RunConfig, split: str) -> VideoArrays:
    if not cfg.run.dataset:
        raise UsageError("--dataset is required for this command")
    path = Path(cfg.run.dataset) / f"{split}.jsonl"
    if not path.is_file():
        raise UsageError(f"dataset file not found: {path}")
    data = VideoArrays.from_videos(read_dataset(path))
    max_labels = int(data.labels.sum(axis=1).max())
    if cfg.train.K > data.num_classes - max_labels:
        raise UsageError(f"K={cfg.train.K} is too large: {path.name} has C={data.num_classes} and videos "
                         f"with {max_labels} labels, so K may be at most {data.num_classes - max_labels}")
    return data


def _model(cfg: C.RunConfig):
    if not cfg.run.checkpoint:
        raise UsageError("--checkpoint is required for this command")
    if not Path(cfg.run.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {cfg.run.checkpoint}")
    model, _ = load_model(cfg.run.checkpoint)
    model.eval()
    return model


def _write_report(out: Path, name: str, report: ev.MetricsReport) -> str:
    table = report.to_table()
    ckpt.atomic_write(out / f"{name}.jsonl", report.to_jsonl())
    ckpt.atomic_write(out / f"{name}.txt", table + "\n")
    return table


def cmd_synth(cfg: C.RunConfig) -> int:
    out = _out(cfg, "synth")
    generate_dataset(cfg.gen, cfg.run.n_train, cfg.run.n_val, out)
    print(f"wrote {out / 'train.jsonl'} ({cfg.run.n_train} videos) and {out / 'val.jsonl'} ({cfg.run.n_val})")
    return EXIT_OK


def cmd_train(cfg: C.RunConfig) -> int:
    data = _load_split(cfg, "train")
    out = _out(cfg, "train")
    if cfg.run.checkpoint and cfg.train.stage == 2:
        model = _model(cfg)
    else:
        model = build_model(data, cfg.train)
        res = train_stage1(model, data, cfg.train, out)
        if res.history:
            print(f"stage 1: {len(res.history)} epochs, final loss {res.history[-1]['total']:.4f} -> {res.checkpoint}")
        else:
            print("stage 1: epochs = 0, model left at its initialization")
    if cfg.train.stage == 2:
        res = train_stage2(model, data, cfg.train, out)
        if res.history:
            print(f"stage 2: {len(res.history)} epochs, final loss {res.history[-1]['total']:.4f} -> {res.checkpoint}")
    return EXIT_OK


def cmd_eval(cfg: C.RunConfig) -> int:
    model, data = _model(cfg), _load_split(cfg, "val")
    out = _out(cfg, "eval")
    report = ev.MetricsReport(head_map=ev.head_maps(model, data, cfg.train.K, cfg.train.seed))
    print(_write_report(out, "eval", report))
    return EXIT_OK


def cmd_sweep(cfg: C.RunConfig) -> int:
    model, data = _model(cfg), _load_split(cfg, "val")
    out = _out(cfg, "sweep")
    rows = []
    for injected in cfg.injected_families:
        rows += ev.robustness_sweep(model, data, cfg.train.K, injected, cfg.train.seed, cfg.run.repeats)
    print(_write_report(out, "sweep", ev.MetricsReport(robustness=rows)))
    return EXIT_OK


def cmd_localize(cfg: C.RunConfig) -> int:
    model, data = _model(cfg), _load_split(cfg, "val")
    out = _out(cfg, "localize")
    results = [ev.localization_grid(model, data, cfg.train.K, injected, cfg.train.seed,
                                    C.floats(cfg.run.thetas), C.floats(cfg.run.ious), cfg.run.normalize)
               for injected in cfg.injected_families]
    dumps = "".join(json.dumps({"injected": r.injected, **d}, sort_keys=True) + "\n"
                    for r in results for d in r.frame_weights)
    ckpt.atomic_write(out / "frame_weights.jsonl", dumps)
    print(_write_report(out, "localize", ev.MetricsReport(localization=results)))
    return EXIT_OK


def cmd_gradcheck(cfg: C.RunConfig) -> int:
    out = _out(cfg, "gradcheck")
    report = gradcheck_tiny(seed=cfg.train.seed)
    lines = [report.summary()] + [f"  {name:<55} {err:.3e}" for name, err in report.entries]
    ckpt.atomic_write(out / "gradcheck.txt", "\n".join(lines) + "\n")
    print(lines[0])
    return EXIT_OK if report.passed else EXIT_VERIFY


HANDLERS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "localize": cmd_localize, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
    except (UsageError, C.ConfigError) as exc:
        print(f"proda: error: {exc}", file=sys.stderr)
        print(parser.format_usage(), end="", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"proda: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, RecordError, OSError, ValueError) as exc:
        print(f"proda: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
