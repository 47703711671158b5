"""Decode-time benchmark over synthetic field batches."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .core import Scene, SkeletonSpec
from .decoder import DecoderConfig, decode
from .encoder import encode
from .fields import FieldGeometry, new_fields
from .synth import FieldNoise, SceneParams, generate_scene, perturb_fields

REPORT_VERSION = 1


@dataclass(frozen=True)
class BenchParams:
    grid_sizes: tuple[int, ...] = (34, 48, 68, 96)  # square grids, cells per side
    n_poses: int = 5
    n_images: int = 10
    stride: int = 8
    heights: tuple[float, float] = (40.0, 200.0)
    noise: FieldNoise = FieldNoise()
    warmup: int = 1


def _fields_for(seed: int, index: int, grid: int, params: BenchParams, skeleton: SkeletonSpec):
    geometry = FieldGeometry(params.stride, grid, grid)
    side = grid * params.stride
    if params.n_poses == 0:
        return new_fields(geometry, skeleton)
    hi = min(params.heights[1], side - 2)
    scene_params = SceneParams(poses_per_scene=(params.n_poses, params.n_poses),
                               height_range=(min(params.heights[0], hi), hi), image_size=(side, side))
    scene = generate_scene(seed, index, scene_params, skeleton)
    pif, paf = encode(scene, skeleton, geometry)
    if not params.noise.is_zero():
        pif, paf = perturb_fields(pif, paf, params.noise, seed * 1_000_003 + index)
    return pif, paf


def _stats(ms: list[float]) -> dict:
    a = np.asarray(ms)
    return {
        "mean": float(a.mean()),
        "median": float(np.median(a)),
        "p95": float(np.percentile(a, 95)),
    }


def run_bench(seed: int, params: BenchParams, skeleton: SkeletonSpec,
              config: DecoderConfig = DecoderConfig()) -> dict:
    """Time ``decode`` per image for every grid size.

    Reports per-image wall time (ms) and the mean number of field cells above
    the fusion cutoff, plus a log-log fit of time against grid area.
    """
    runs = []
    for grid in params.grid_sizes:
        batch = [_fields_for(seed, i, grid, params, skeleton) for i in range(params.n_images)]
        for pif, paf in batch[:params.warmup]:
            decode(pif, paf, skeleton, config)
        times, n_poses = [], []
        for pif, paf in batch:
            t0 = time.perf_counter()
            poses = decode(pif, paf, skeleton, config)
            times.append((time.perf_counter() - t0) * 1e3)
            n_poses.append(len(poses))
        runs.append({
            "grid": [grid, grid],
            "cells": grid * grid,
            "n_images": params.n_images,
            "decode_ms": _stats(times),
            "cells_above_threshold": {
                "pif": float(np.mean([(p.data[:, 0] > config.fusion_cutoff).sum() for p, _ in batch])),
                "paf": float(np.mean([(q.data[:, 0] > config.fusion_cutoff).sum() for _, q in batch])),
            },
            "poses_decoded": float(np.mean(n_poses)),
        })
    scaling = None
    if len(runs) >= 2:
        area = np.log([r["cells"] for r in runs])
        t = np.log([max(r["decode_ms"]["median"], 1e-6) for r in runs])
        exponent = float(np.polyfit(area, t, 1)[0])
        scaling = {"time_vs_area_exponent": exponent}
    return {
        "version": REPORT_VERSION,
        "seed": seed,
        "n_poses": params.n_poses,
        "stride": params.stride,
        "runs": runs,
        "scaling": scaling,
    }


def format_report(report: dict) -> str:
    lines = [f"decode benchmark  seed={report['seed']}  poses={report['n_poses']}  stride={report['stride']}",
             f"{'grid':>9} {'mean ms':>9} {'median':>9} {'p95':>9} {'pif>thr':>9} {'paf>thr':>9}"]
    for r in report["runs"]:
        d = r["decode_ms"]
        c = r["cells_above_threshold"]
        lines.append(f"{r['grid'][0]:>4}x{r['grid'][1]:<4} {d['mean']:9.2f} {d['median']:9.2f} {d['p95']:9.2f} "
                     f"{c['pif']:9.0f} {c['paf']:9.0f}")
    if report["scaling"] is not None:
        e = report["scaling"]["time_vs_area_exponent"]
        lines.append(f"time ~ area^{e:.2f}" + ("" if math.isfinite(e) else " (degenerate)"))
    return "\n".join(lines) + "\n"


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
