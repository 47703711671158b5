"""OKS matching and COCO-protocol keypoint AP/AR."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Pose, Scene, SkeletonSpec
from .decoder import DecodedPose

OKS_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, 1e10),
    "M": (32.0 ** 2, 96.0 ** 2),
    "L": (96.0 ** 2, 1e10),
}
MAX_DETECTIONS = 20
METRIC_KEYS = ("AP", "AP50", "AP75", "APM", "APL", "AR", "AR50", "AR75", "ARM", "ARL")


class MetricError(ValueError):
    pass


def oks(pred: DecodedPose, gt: Pose, skeleton: SkeletonSpec) -> float:
    """Object keypoint similarity; absent predicted joints contribute 0."""
    g = gt.to_array()
    labeled = g[:, 2] > 0
    if not labeled.any():
        raise MetricError("ground-truth pose has no labeled keypoints")
    kappa = np.asarray(skeleton.kappa)
    d2 = (pred.joints[:, 0] - g[:, 0]) ** 2 + (pred.joints[:, 1] - g[:, 1]) ** 2
    sim = np.where(pred.present, np.exp(-d2 / (2.0 * gt.bbox_area * kappa ** 2)), 0.0)
    return float(sim[labeled].mean())


def oks_matrix(preds: Sequence[DecodedPose], gts: Sequence[Pose], skeleton: SkeletonSpec) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = oks(p, g, skeleton)
    return out


def pck(pred: DecodedPose, gt: Pose, alpha: float) -> float:
    """Fraction of labeled keypoints within ``alpha * sqrt(area)`` (inclusive)."""
    if alpha <= 0:
        raise MetricError("alpha must be positive")
    g = gt.to_array()
    labeled = g[:, 2] > 0
    d = np.hypot(pred.joints[:, 0] - g[:, 0], pred.joints[:, 1] - g[:, 1])
    hit = pred.present & (d <= alpha * math.sqrt(gt.bbox_area))
    return float(hit[labeled].mean())


def _pred_area(pose: DecodedPose) -> float:
    pts = pose.joints[pose.present, :2]
    if len(pts) == 0:
        return 0.0
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(ext[0] * ext[1])


def _match_image(preds, gts, skeleton, area_rng):
    """Greedy score-ordered matching at every threshold for one image.

    Returns per-prediction (scores, matched[T,D], ignored[T,D]) and the
    number of non-ignored ground truths.
    """
    preds = sorted(preds, key=lambda p: -p.score)[:MAX_DETECTIONS]
    gt_ignore = np.array([not (area_rng[0] <= g.bbox_area <= area_rng[1]) for g in gts], dtype=bool)
    # non-ignored ground truths are matched first
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    gts = [gts[i] for i in gt_order]
    gt_ignore = gt_ignore[gt_order]
    n_t, n_d, n_g = len(OKS_THRESHOLDS), len(preds), len(gts)
    ious = oks_matrix(preds, gts, skeleton) if n_d and n_g else np.zeros((n_d, n_g))
    dt_match = np.zeros((n_t, n_d), dtype=bool)
    dt_ignore = np.zeros((n_t, n_d), dtype=bool)
    for t, thr in enumerate(OKS_THRESHOLDS):
        gt_taken = np.zeros(n_g, dtype=bool)
        for d in range(n_d):
            best = min(thr, 1 - 1e-10)
            m = -1
            for g in range(n_g):
                if gt_taken[g]:
                    continue
                if m > -1 and not gt_ignore[m] and gt_ignore[g]:
                    break
                if ious[d, g] < best:
                    continue
                best = ious[d, g]
                m = g
            if m == -1:
                continue
            gt_taken[m] = True
            dt_match[t, d] = True
            dt_ignore[t, d] = gt_ignore[m]
    out_of_range = np.array([not (area_rng[0] <= _pred_area(p) <= area_rng[1]) for p in preds], dtype=bool)
    dt_ignore |= ~dt_match & out_of_range[None, :]
    scores = np.array([p.score for p in preds])
    return scores, dt_match, dt_ignore, int((~gt_ignore).sum())


def _accumulate(per_image) -> tuple[np.ndarray, np.ndarray]:
    """Precision at the recall thresholds and max recall, per OKS threshold."""
    n_t = len(OKS_THRESHOLDS)
    precision = -np.ones((n_t, len(RECALL_THRESHOLDS)))
    recall = -np.ones(n_t)
    n_gt = sum(r[3] for r in per_image)
    if n_gt == 0:
        return precision, recall
    scores = np.concatenate([r[0] for r in per_image]) if per_image else np.zeros(0)
    order = np.argsort(-scores, kind="mergesort")
    matched = np.concatenate([r[1] for r in per_image], axis=1)[:, order] if per_image else np.zeros((n_t, 0), bool)
    ignored = np.concatenate([r[2] for r in per_image], axis=1)[:, order] if per_image else np.zeros((n_t, 0), bool)
    tps = np.cumsum(matched & ~ignored, axis=1, dtype=np.float64)
    fps = np.cumsum(~matched & ~ignored, axis=1, dtype=np.float64)
    for t in range(n_t):
        tp, fp = tps[t], fps[t]
        rc = tp / n_gt
        pr = tp / np.maximum(tp + fp, np.spacing(1))
        recall[t] = rc[-1] if len(rc) else 0.0
        # precision envelope, non-increasing in recall
        pr = np.maximum.accumulate(pr[::-1])[::-1] if len(pr) else pr
        q = np.zeros(len(RECALL_THRESHOLDS))
        idx = np.searchsorted(rc, RECALL_THRESHOLDS, side="left")
        valid = idx < len(pr)
        q[valid] = pr[idx[valid]]
        precision[t] = q
    return precision, recall


def _mean_valid(x: np.ndarray) -> float:
    v = x[x > -1]
    return float(v.mean()) if v.size else -1.0


def evaluate(predictions: Sequence[Sequence[DecodedPose]], gts: Sequence[Scene],
             skeleton: SkeletonSpec) -> dict[str, float]:
    """COCO keypoint metrics over a list of images.

    ``predictions[i]`` are the decoded poses of ``gts[i]``; only the 20
    highest-scoring poses per image count.
    """
    if len(predictions) != len(gts):
        raise MetricError("need one prediction list per ground-truth scene")
    metrics: dict[str, float] = {}
    for area_name, rng in AREA_RANGES.items():
        per_image = [_match_image(list(p), list(s.poses), skeleton, rng) for p, s in zip(predictions, gts)]
        precision, recall = _accumulate(per_image)
        suffix = "" if area_name == "all" else area_name
        metrics["AP" + suffix] = _mean_valid(precision)
        metrics["AR" + suffix] = _mean_valid(recall)
        if area_name == "all":
            metrics["AP50"] = _mean_valid(precision[0])
            metrics["AP75"] = _mean_valid(precision[5])
            metrics["AR50"] = _mean_valid(recall[0:1])
            metrics["AR75"] = _mean_valid(recall[5:6])
    return {k: metrics[k] for k in METRIC_KEYS}


def recall_at(predictions, gts, skeleton, threshold: float) -> float:
    """Fraction of ground truths matched at one OKS threshold (all areas)."""
    t = int(np.argmin(np.abs(OKS_THRESHOLDS - threshold)))
    if not math.isclose(OKS_THRESHOLDS[t], threshold):
        raise MetricError(f"threshold {threshold} is not one of {OKS_THRESHOLDS.tolist()}")
    per_image = [_match_image(list(p), list(s.poses), skeleton, AREA_RANGES["all"]) for p, s in zip(predictions, gts)]
    _, recall = _accumulate(per_image)
    return float(recall[t])


def write_metrics(path: str | Path, metrics: dict[str, float]) -> None:
    Path(path).write_text(json.dumps({k: round(v, 6) for k, v in metrics.items()}, indent=1) + "\n")
