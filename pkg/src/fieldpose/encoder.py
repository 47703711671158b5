"""Ground-truth scenes -> PIF/PAF target fields."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Scene, SkeletonSpec
from .fields import SIGMA_MIN, FieldGeometry, PafField, PifField, new_fields


@dataclass(frozen=True)
class EncoderConfig:
    s_target: float = 4.0  # PIF window side, cells
    r_paf: float = 1.0  # PAF support distance from the segment, cells
    b_target: float = 1.0  # spread written into targets, cells

    def __post_init__(self):
        if self.s_target <= 0 or self.r_paf <= 0 or self.b_target <= 0:
            raise ValueError("encoder sizes must be positive")


def _window(lo: float, hi: float, n: int) -> tuple[int, int]:
    return max(0, math.ceil(lo)), min(n - 1, math.floor(hi))


def _ordered(scene: Scene):
    # stable: equal ids keep input order
    return sorted(scene.poses, key=lambda p: p.instance_id)


def encode_pif(scene: Scene, skeleton: SkeletonSpec, geometry: FieldGeometry,
               config: EncoderConfig = EncoderConfig()) -> PifField:
    """Write PIF targets: every cell within the window of a labeled keypoint
    regresses that keypoint; contested cells go to the nearest keypoint."""
    scene.validate(skeleton)
    pif, _ = new_fields(geometry, skeleton)
    data = pif.data
    stride = geometry.stride
    half = config.s_target / 2.0
    best = np.full((skeleton.n_keypoints, geometry.grid_h, geometry.grid_w), np.inf)

    for pose in _ordered(scene):
        scale = math.sqrt(pose.bbox_area) / stride
        for k, kp in enumerate(pose.keypoints):
            if not kp.labeled:
                continue
            fx, fy = kp.x / stride, kp.y / stride
            i0, i1 = _window(fx - half, fx + half, geometry.grid_w)
            j0, j1 = _window(fy - half, fy + half, geometry.grid_h)
            if i0 > i1 or j0 > j1:
                continue
            ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
            dist = np.hypot(ii - fx, jj - fy)
            region = best[k, j0:j1 + 1, i0:i1 + 1]
            win = dist < region
            region[win] = dist[win]
            cell = data[k, :, j0:j1 + 1, i0:i1 + 1]
            cell[0][win] = 1.0
            cell[1][win] = (fx - ii)[win]
            cell[2][win] = (fy - jj)[win]
            cell[3][win] = config.b_target
            cell[4][win] = max(skeleton.kappa[k] * scale, SIGMA_MIN)
    return pif


def encode_paf(scene: Scene, skeleton: SkeletonSpec, geometry: FieldGeometry,
               config: EncoderConfig = EncoderConfig()) -> PafField:
    """Write PAF targets along every fully labeled connection.

    Vector 1 points at whichever endpoint is closer to the cell (lower
    keypoint index on ties), vector 2 at the other endpoint of the same pose.
    """
    scene.validate(skeleton)
    _, paf = new_fields(geometry, skeleton)
    data = paf.data
    stride = geometry.stride
    r = config.r_paf
    best = np.full((skeleton.n_connections, geometry.grid_h, geometry.grid_w), np.inf)

    for pose in _ordered(scene):
        for ci, (a, b) in enumerate(skeleton.connections):
            kpa, kpb = pose.keypoints[a], pose.keypoints[b]
            if not (kpa.labeled and kpb.labeled):
                continue
            ax, ay = kpa.x / stride, kpa.y / stride
            bx, by = kpb.x / stride, kpb.y / stride
            i0, i1 = _window(min(ax, bx) - r, max(ax, bx) + r, geometry.grid_w)
            j0, j1 = _window(min(ay, by) - r, max(ay, by) + r, geometry.grid_h)
            if i0 > i1 or j0 > j1:
                continue
            ii, jj = np.meshgrid(np.arange(i0, i1 + 1, dtype=np.float64), np.arange(j0, j1 + 1, dtype=np.float64))
            sx, sy = bx - ax, by - ay
            length2 = sx * sx + sy * sy
            if length2 > 0:
                t = np.clip(((ii - ax) * sx + (jj - ay) * sy) / length2, 0.0, 1.0)
            else:
                t = np.zeros_like(ii)
            seg_dist = np.hypot(ii - (ax + t * sx), jj - (ay + t * sy))
            region = best[ci, j0:j1 + 1, i0:i1 + 1]
            win = (seg_dist <= r) & (seg_dist < region)
            if not win.any():
                continue
            region[win] = seg_dist[win]

            da = np.hypot(ii - ax, jj - ay)
            db = np.hypot(ii - bx, jj - by)
            a_first = (da < db) | ((da == db) & (a < b))
            n1x = np.where(a_first, ax, bx)
            n1y = np.where(a_first, ay, by)
            n2x = np.where(a_first, bx, ax)
            n2y = np.where(a_first, by, ay)
            cell = data[ci, :, j0:j1 + 1, i0:i1 + 1]
            cell[0][win] = 1.0
            cell[1][win] = (n1x - ii)[win]
            cell[2][win] = (n1y - jj)[win]
            cell[3][win] = config.b_target
            cell[4][win] = (n2x - ii)[win]
            cell[5][win] = (n2y - jj)[win]
            cell[6][win] = config.b_target
    return paf


def encode(scene: Scene, skeleton: SkeletonSpec, geometry: FieldGeometry | None = None,
           config: EncoderConfig = EncoderConfig(), stride: int = 8) -> tuple[PifField, PafField]:
    if geometry is None:
        geometry = FieldGeometry.for_image(scene.width, scene.height, stride)
    return encode_pif(scene, skeleton, geometry, config), encode_paf(scene, skeleton, geometry, config)
