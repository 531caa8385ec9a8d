"""Command-line entry point: ``vicreg-audio <verb> --config run.json [key=value ...]``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audio import AudioFormatError, random_crop, resample
from .augment import NoiseBank, apply_params, draw_params, write_spec
from .checkpoint import CheckpointError, load_checkpoint
from .manifest import Manifest, read_manifest, stratified_split, write_split_manifest
from .pipeline import (
    ConfigError,
    LabeledSet,
    NumericalError,
    RunConfig,
    RunReport,
    aggregate_runs,
    evaluate,
    load_clips,
    pretrain,
    spectrogram_batch,
    train_downstream,
)
from .rng import RandomStream

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
VERBS = ("split", "pretrain", "train", "probe", "eval", "preview-augment", "aggregate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vicreg-audio", description="Self-supervised audio pretraining and evaluation.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("overrides", nargs="*", metavar="key=value",
                   help="dotted config override, e.g. schedule.lr_peak=0.3 (value parsed as JSON when possible)")
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--output-dir", help="directory for checkpoints, reports and other outputs")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--workers", type=int, default=1, help="threads for per-sample preprocessing")
    p.add_argument("--checkpoint", help="eval: checkpoint to evaluate (default: init_checkpoint)")
    p.add_argument("--manifest", help="eval / preview-augment: manifest to read (default from config)")
    p.add_argument("--count", type=int, default=4, help="preview-augment: number of recordings")
    p.add_argument("--reports", nargs="+", help="aggregate: report.json files")
    return p


def parse_overrides(items) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"override {item!r} is not of the form key=value")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load_config(args, mode: str | None = None) -> RunConfig:
    if not args.config:
        raise UsageError(f"{args.verb}: --config is required")
    overrides = parse_overrides(args.overrides)
    if mode is not None:
        # set before parsing so the mode's optimizer defaults apply
        overrides["mode"] = mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    return RunConfig.load(args.config, overrides)


def _output_dir(args) -> Path:
    if not args.output_dir:
        raise UsageError(f"{args.verb}: --output-dir is required")
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _relocate(manifest: Manifest, src_dir: Path, dst_dir: Path) -> Manifest:
    """Rewrite relative entry paths so they stay valid from ``dst_dir``."""
    entries = []
    for e in manifest:
        p = Path(e.path)
        if not p.is_absolute():
            p = Path(os.path.relpath((src_dir / p).resolve(), dst_dir.resolve()))
        entries.append(replace(e, path=p.as_posix()))
    return Manifest(entries)


def cmd_split(args) -> int:
    cfg = _load_config(args)
    if cfg.data.manifest is None:
        raise ConfigError("data.manifest: required for split")
    src = cfg.resolve(cfg.data.manifest)
    out = _output_dir(args)
    manifest = _relocate(read_manifest(src), src.parent, out)
    splits = stratified_split(manifest, cfg.split.fractions, cfg.split.mini_fraction, cfg.seed)
    for path in write_split_manifest(out, splits):
        print(path)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    if cfg.mode != "pretrain":
        raise ConfigError(f"mode: pretrain needs mode 'pretrain', got {cfg.mode!r}")
    _, report = pretrain(cfg, args.workers, _output_dir(args))
    last = report.epochs[-1]["loss"]["total"] if report.epochs else float("nan")
    print(f"pretrained {len(report.steps)} steps, final epoch loss {last:.4f}")
    return EXIT_OK


def cmd_train(args, mode=None) -> int:
    cfg = _load_config(args, mode)
    if mode is None and cfg.mode not in ("scratch", "finetune"):
        raise ConfigError(f"mode: train expects 'scratch' or 'finetune' (use the probe verb for probing), "
                          f"got {cfg.mode!r}")
    _, report = train_downstream(cfg, args.workers, _output_dir(args))
    if report.metrics:
        print(json.dumps({k: v for k, v in report.metrics.items() if k != "confusion"}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    ckpt = args.checkpoint or cfg.init_checkpoint
    if ckpt is None:
        raise UsageError("eval: pass --checkpoint or set init_checkpoint")
    store, meta = load_checkpoint(ckpt if args.checkpoint else cfg.resolve(ckpt))
    names = meta.get("extra", {}).get("labels")
    if not names or not store.has("classifier."):
        raise CheckpointError(f"{ckpt}: checkpoint has no classifier or label list")
    manifest = Path(args.manifest) if args.manifest else cfg.resolve(cfg.data.test)
    if manifest is None:
        raise ConfigError("data.test: required for eval (or pass --manifest)")
    clips, labels = load_clips(manifest, cfg.augment.sample_rate)
    unknown = sorted(set(labels) - set(names))
    if unknown:
        raise ConfigError(f"{manifest}: labels {unknown} are not known to the checkpoint")
    index = {n: i for i, n in enumerate(names)}
    data = LabeledSet(spectrogram_batch(clips, cfg.augment, args.workers),
                      np.asarray([index[n] for n in labels]))
    metrics = evaluate(store, data).to_dict()
    text = json.dumps(metrics, indent=2)
    if args.output_dir:
        (_output_dir(args) / "metrics.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_preview(args) -> int:
    cfg = _load_config(args)
    manifest = Path(args.manifest) if args.manifest else cfg.resolve(cfg.data.manifest)
    if manifest is None:
        raise ConfigError("data.manifest: required for preview-augment (or pass --manifest)")
    out = _output_dir(args)
    clips, _ = load_clips(manifest, cfg.augment.sample_rate)
    noise = None
    if cfg.data.noise_dir:
        noise = NoiseBank.from_directory(cfg.resolve(cfg.data.noise_dir), cfg.augment.sample_rate)
    aug = cfg.augment
    for i, clip in enumerate(clips[:args.count]):
        # same lanes as the first pretraining epoch
        crop = random_crop(resample(clip, aug.sample_rate), aug.clip_seconds, RandomStream(cfg.seed, (0, i, 2)))
        for lane, tag in ((0, "a"), (1, "b")):
            params = draw_params(aug, RandomStream(cfg.seed, (0, i, lane)), noise)
            view = apply_params(crop, params, aug, noise)
            path = out / f"view_{i:04d}_{tag}.spec"
            write_spec(path, view.values, params.to_dict())
            print(path)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    if not args.reports:
        raise UsageError("aggregate: --reports is required")
    reports = []
    for path in args.reports:
        try:
            reports.append(RunReport.from_dict(json.loads(Path(path).read_text())))
        except FileNotFoundError:
            raise ConfigError(f"report not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    table = aggregate_runs(reports)
    text = json.dumps(table, indent=2)
    if args.output_dir:
        (_output_dir(args) / "aggregate.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_intermixed_args(argv)
        handlers = {
            "split": cmd_split,
            "pretrain": cmd_pretrain,
            "train": cmd_train,
            "probe": lambda a: cmd_train(a, mode="probe"),
            "eval": cmd_eval,
            "preview-augment": cmd_preview,
            "aggregate": cmd_aggregate,
        }
        return handlers[args.verb](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, AudioFormatError, CheckpointError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
