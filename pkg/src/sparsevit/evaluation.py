"""Pixel-level F1 / IoU / AUC and dataset-level evaluation with perturbation sweeps."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import imageio, perturb
from .lff import predict_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _check_pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    p, g = _check_pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def f1(pred, gt) -> float:
    """``2tp / (2tp + fp + fn)``; 1.0 when both masks are empty."""
    c = confusion(pred, gt)
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def iou(pred, gt) -> float:
    """``tp / (tp + fp + fn)``; 1.0 when both masks are empty."""
    c = confusion(pred, gt)
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def auc(scores, gt) -> float | None:
    """Mann-Whitney AUC with half credit for ties; ``None`` if ``gt`` is single-class."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    g = np.asarray(gt).astype(bool).reshape(-1)
    if s.shape != g.shape:
        raise ValueError(f"scores shape {np.shape(scores)} does not match ground truth {np.shape(gt)}")
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    u = ranks[g].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class EvalReport:
    threshold: float
    rows: list = field(default_factory=list)        # (sample, f1, auc|None, iou)
    skipped: int = 0
    robustness: list = field(default_factory=list)  # (perturbation, severity, mean_f1)

    @property
    def mean_f1(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_iou(self) -> float:
        return float(np.mean([r[3] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_auc(self) -> float:
        vals = [r[2] for r in self.rows if r[2] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def auc_excluded(self) -> int:
        return sum(1 for r in self.rows if r[2] is None)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "f1", "auc", "iou"])
        for name, f, a, i in self.rows:
            w.writerow([name, repr(f), "" if a is None else repr(a), repr(i)])
        w.writerow([])
        w.writerow(["# summary"])
        w.writerow(["threshold", repr(self.threshold)])
        w.writerow(["samples", len(self.rows)])
        w.writerow(["skipped", self.skipped])
        w.writerow(["mean_f1", repr(self.mean_f1)])
        w.writerow(["mean_auc", repr(self.mean_auc)])
        w.writerow(["auc_excluded", self.auc_excluded])
        w.writerow(["mean_iou", repr(self.mean_iou)])
        return buf.getvalue()

    def robustness_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["perturbation", "severity", "mean_f1"])
        for p, s, f in self.robustness:
            w.writerow([p, s, repr(f)])
        return buf.getvalue()


def read_metrics_csv(text: str) -> list:
    """Per-sample rows ``(sample, f1, auc|None, iou)`` from :meth:`EvalReport.metrics_csv`."""
    rows = []
    for rec in csv.reader(io.StringIO(text)):
        if not rec or rec[0] == "sample":
            continue
        if rec[0].startswith("#"):
            break
        rows.append((rec[0], float(rec[1]), float(rec[2]) if rec[2] else None, float(rec[3])))
    return rows


def score_sample(logits: np.ndarray, gt: np.ndarray, threshold: float) -> tuple:
    pred = predict_mask(logits, threshold)
    return f1(pred, gt), auc(_sigmoid(logits), gt), iou(pred, gt)


def read_manifest(path) -> list:
    """Rows of ``seed,image_path,mask_path,variant`` with paths resolved against the manifest."""
    root = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["image_path"] = os.path.join(root, r["image_path"])
        r["mask_path"] = os.path.join(root, r["mask_path"])
    return rows


def perturbation_grid(cfg) -> list:
    grid = [("jpeg", q) for q in cfg.jpeg_qualities]
    grid += [("blur", k) for k in cfg.blur_kernels]
    grid += [("noise", s) for s in cfg.noise_sigmas]
    return grid


def apply_perturbation(image: np.ndarray, kind: str, severity, seed: int) -> np.ndarray:
    if kind == "jpeg":
        return perturb.jpeg_like(image, int(severity))
    if kind == "blur":
        k = int(severity)
        return perturb.gaussian_blur(image, k, k / 3.0)
    if kind == "noise":
        return perturb.gaussian_noise(image, float(severity), seed)
    raise ValueError(f"unknown perturbation {kind!r}")


def evaluate_samples(predict, samples, threshold: float = 0.5, grid=None,
                     noise_seed: int = 0) -> EvalReport:
    """``predict`` maps a ``[3,H,W]`` image to ``[H,W]`` logits; ``samples`` yields
    ``(name, image, mask)`` with ``image=None`` marking an unreadable sample."""
    report = EvalReport(threshold)
    loaded = []
    for name, image, mask in samples:
        if image is None:
            report.skipped += 1
            continue
        loaded.append((name, image, mask))
        report.rows.append((name, *score_sample(predict(image), mask, threshold)))
    for kind, sev in grid or ():
        scores = []
        for i, (name, image, mask) in enumerate(loaded):
            pert = apply_perturbation(image, kind, sev, noise_seed + i)
            scores.append(f1(predict_mask(predict(pert), threshold), mask))
        report.robustness.append((kind, sev, float(np.mean(scores)) if scores else float("nan")))
    return report


def iter_manifest(path):
    for r in read_manifest(path):
        try:
            image = imageio.read_ppm(r["image_path"]).astype(np.float64) / 255.0
            mask = (imageio.read_pgm(r["mask_path"]) > 127).astype(np.uint8)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable sample %s: %s", r["image_path"], exc)
            yield r["seed"], None, None
            continue
        yield r["seed"], image, mask


def evaluate_dataset(predict, manifest_path, threshold: float = 0.5, grid=None,
                     noise_seed: int = 0) -> EvalReport:
    return evaluate_samples(predict, iter_manifest(manifest_path), threshold, grid, noise_seed)
