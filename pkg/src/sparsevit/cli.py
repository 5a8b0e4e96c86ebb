"""``sparsevit`` command line: synth, train, eval, profile.

Exit codes: 0 success, 1 usage/config error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, config as config_mod, evaluation, imageio, synth, tensorio
from .config import Config, ConfigError
from .profiler import ab_compare, attention_quadratic_flops, model_cost
from .train import (TrainState, TrainingAborted, epoch_order, load_checkpoint,
                    read_manifest, save_checkpoint, train_step)

log = logging.getLogger("sparsevit")

SPLITS = ("train", "val", "test", "test_hard")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- helpers ------------------------------------------------------------------------

def _load_config(args) -> tuple:
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
        path = os.path.abspath(args.config)
    else:
        text = config_mod.DESK.to_text()
        path = "<builtin desk>"
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "uniform_rate", None) is not None:
        overrides["uniform_rate"] = args.uniform_rate
    cfg = config_mod.parse(text, require_model=True, **overrides)
    return cfg, path


def _prepare_out(out, force: bool) -> str:
    if out is None:
        raise UsageError("--out DIR is required")
    if os.path.isdir(out) and os.listdir(out) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path, text: str) -> None:
    tensorio.atomic_write_bytes(path, text.encode())


def _run_manifest(out, command, cfg: Config, cfg_path, started, extra=None) -> None:
    doc = {
        "command": command,
        "config_path": cfg_path,
        "config_hash": hashlib.sha256(cfg.to_text().encode()).hexdigest()[:16],
        "model_hash": cfg.model_hash(),
        "seed": cfg.seed,
        "version": f"sparsevit-{__version__}",
        "out": os.path.abspath(out),
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": cfg.to_text(),
    }
    doc.update(extra or {})
    _write_text(os.path.join(out, "run_manifest.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- synth ------------------------------------------------------------------------

def synth_dataset(cfg: Config, out: str) -> dict:
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test, "test_hard": cfg.n_test_hard}
    for split in SPLITS:
        os.makedirs(os.path.join(out, split), exist_ok=True)
        rows = []
        for seed in synth.split_seeds(split, counts[split]):
            hard = split == "test_hard"
            sample = synth.generate(synth.make_spec(seed, cfg, hard_negative=hard))
            img_rel = f"{split}/{seed:07d}.ppm"
            mask_rel = f"{split}/{seed:07d}_mask.pgm"
            imageio.write_ppm(os.path.join(out, img_rel), imageio.to_uint8(sample.image))
            imageio.write_pgm(os.path.join(out, mask_rel), sample.mask * np.uint8(255))
            rows.append((seed, img_rel, mask_rel, "hard_negative" if hard else "splice"))
        lines = ["seed,image_path,mask_path,variant"] + [",".join(map(str, r)) for r in rows]
        _write_text(os.path.join(out, f"{split}.csv"), "\n".join(lines) + "\n")
    return counts


def cmd_synth(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    cfg, path = _load_config(args)
    out = _prepare_out(args.out, args.force)
    counts = synth_dataset(cfg, out)
    _run_manifest(out, "synth", cfg, path, started, {"counts": counts})
    print(f"wrote {sum(counts.values())} samples to {out}")
    return 0


# -- train ------------------------------------------------------------------------

def load_split(data_dir: str, split: str) -> tuple:
    rows = evaluation.read_manifest(os.path.join(data_dir, f"{split}.csv"))
    if not rows:
        return np.zeros((0, 3, 1, 1), np.uint8), np.zeros((0, 1, 1), np.uint8)
    images = np.stack([imageio.read_ppm(r["image_path"]) for r in rows])
    masks = np.stack([(imageio.read_pgm(r["mask_path"]) > 127).astype(np.uint8) for r in rows])
    return images, masks


def fit(state: TrainState, images: np.ndarray, masks: np.ndarray, out: str,
        checkpoint_every: int = 0, progress=None) -> list:
    """Run ``state`` to ``total_steps``; appends ``step,lr,loss`` rows to ``out/loss.csv``."""
    cfg = state.cfg
    n = len(images)
    bs = cfg.batch_size
    per_epoch = n // bs
    if per_epoch == 0:
        raise UsageError(f"{n} training samples cannot fill one batch of {bs}")
    loss_path = os.path.join(out, "loss.csv")
    kept = []
    if os.path.exists(loss_path) and state.step > 0:
        with open(loss_path) as fh:
            kept = [l for l in fh.read().splitlines()[1:] if l and int(l.split(",")[0]) < state.step]
    losses = []
    with open(loss_path, "w") as fh:
        fh.write("step,lr,loss\n")
        for line in kept:
            fh.write(line + "\n")
        fh.flush()
        order = None
        while state.step < state.total_steps:
            epoch, b = divmod(state.step, per_epoch)
            if b == 0 or order is None:
                order = epoch_order(cfg.seed, epoch, n)
            idx = np.sort(order[b * bs:(b + 1) * bs])
            lr, step = state.lr(), state.step
            loss = train_step(state, images[idx].astype(np.float64) / 255.0, masks[idx])
            losses.append(loss)
            fh.write(f"{step},{lr!r},{loss!r}\n")
            fh.flush()
            if progress:
                progress(step, lr, loss)
            if checkpoint_every and state.step % checkpoint_every == 0:
                save_checkpoint(state, os.path.join(out, "checkpoints", f"step_{state.step:06d}"))
    save_checkpoint(state, os.path.join(out, "checkpoint"))
    return losses


def cmd_train(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    cfg, path = _load_config(args)
    if not args.data:
        raise UsageError("train needs --data DATASET_DIR")
    if args.resume:
        os.makedirs(args.out, exist_ok=True)
        state = load_checkpoint(args.resume, cfg)
    else:
        _prepare_out(args.out, args.force)
        state = None
    images, masks = load_split(args.data, "train")
    if cfg.train_limit:
        images, masks = images[:cfg.train_limit], masks[:cfg.train_limit]
    total = cfg.epochs * (len(images) // cfg.batch_size)
    if state is None:
        from .model import SparseViT
        state = TrainState(SparseViT(cfg), total)
    plans = {"stage3": list(state.model.plan3.rates), "stage3_taps": list(state.model.plan3.tap_indices),
             "stage4": list(state.model.plan4.rates), "stage4_taps": list(state.model.plan4.tap_indices)}
    extra = {"sparsity_plan": plans, "uniform_rate": cfg.uniform_rate, "total_steps": total}
    _write_text(os.path.join(args.out, "config.txt"), cfg.to_text())

    def progress(step, lr, loss):
        if step % 50 == 0:
            log.info("step %d lr %.3e loss %.5f", step, lr, loss)

    try:
        fit(state, images, masks, args.out, args.checkpoint_every or cfg.checkpoint_every, progress)
    finally:
        _run_manifest(args.out, "train", cfg, path, started, extra)
    return 0


# -- eval -------------------------------------------------------------------------

def cmd_eval(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    cfg, path = _load_config(args)
    if not args.checkpoint or not args.data:
        raise UsageError("eval needs --checkpoint DIR and --data DATASET_DIR")
    man = read_manifest(args.checkpoint)
    if man["config_hash"] != cfg.model_hash() and not args.allow_mismatch:
        raise UsageError(f"checkpoint config hash {man['config_hash']} != config {cfg.model_hash()} "
                         "(use --allow-mismatch)")
    out = _prepare_out(args.out, args.force)
    model = load_checkpoint(args.checkpoint, cfg, allow_mismatch=True).model
    grid = evaluation.perturbation_grid(cfg) if args.robustness else None
    report = evaluation.evaluate_dataset(model.predict_logits,
                                         os.path.join(args.data, f"{args.split}.csv"),
                                         cfg.threshold, grid, config_mod.substream(cfg.seed, "eval-noise")
                                         .integers(2 ** 31))
    _write_text(os.path.join(out, "metrics.csv"), report.metrics_csv())
    if grid:
        _write_text(os.path.join(out, "robustness.csv"), report.robustness_csv())
    _run_manifest(out, "eval", cfg, path, started,
                  {"checkpoint": os.path.abspath(args.checkpoint), "split": args.split})
    print(f"mean F1 {report.mean_f1:.4f}  mean AUC {report.mean_auc:.4f}  mean IoU {report.mean_iou:.4f}"
          f"  ({len(report.rows)} samples, {report.skipped} skipped)")
    return 0


# -- profile ------------------------------------------------------------------------

def cmd_profile(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    cfg, path = _load_config(args)
    size = args.size or cfg.input_size
    if args.ab_global:
        ab = ab_compare(cfg, size, size)
        text = ab.to_csv()
        summary = f"sparse {ab.sparse.total_flops} / global {ab.dense.total_flops} = {ab.ratio:.4f}"
    else:
        report = model_cost(cfg, size, size)
        text = report.to_csv()
        summary = f"params {report.total_params}  flops {report.total_flops}"
    if args.sweep_rates:
        n = (size // 16) ** 2
        lines = ["rate,attention_quadratic_flops,ratio_to_global"]
        base = attention_quadratic_flops(n, cfg.channels[2], 1)
        for s in (1, 2, 4, 8):
            q = attention_quadratic_flops(n, cfg.channels[2], s)
            lines.append(f"{s},{q},{q / base!r}")
        sweep = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text(os.path.join(args.out, "cost.csv"), text)
        if args.sweep_rates:
            _write_text(os.path.join(args.out, "rate_sweep.csv"), sweep)
        _run_manifest(args.out, "profile", cfg, path, started, {"input_size": size})
    else:
        sys.stdout.write(text)
        if args.sweep_rates:
            sys.stdout.write(sweep)
    print(summary, file=sys.stderr)
    return 0


# -- entry point ------------------------------------------------------------------------

def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so flags given before the subcommand survive
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file", **kw)
    common.add_argument("--seed", type=int, help="root seed (overrides config)", **kw)
    common.add_argument("--out", help="output directory", **kw)
    common.add_argument("--force", action="store_true", help="allow a non-empty output directory", **kw)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(suppress=True)
    parser = _Parser(prog="sparsevit", description=__doc__.splitlines()[0], parents=[_common(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a synthetic splice dataset")

    p = sub.add_parser("train", parents=[common], help="train on a synthetic dataset")
    p.add_argument("--data", help="dataset directory written by synth")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--uniform-rate", type=int, help="single sparsity rate for every block")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--robustness", action="store_true", help="also run the perturbation grid")
    p.add_argument("--allow-mismatch", action="store_true")
    p.add_argument("--uniform-rate", type=int)

    p = sub.add_parser("profile", parents=[common], help="analytic parameter/FLOP report")
    p.add_argument("--ab-global", action="store_true", help="compare against global attention")
    p.add_argument("--size", type=int, help="input size (default: config input_size)")
    p.add_argument("--sweep-rates", action="store_true", help="stage-3 quadratic term for s in 1,2,4,8")
    p.add_argument("--uniform-rate", type=int)
    return parser


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "profile": cmd_profile}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"sparsevit: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingAborted, OSError, synth.DegenerateRegionError) as exc:
        print(f"sparsevit: aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
