"""Synthetic scenes and field noise standing in for a trained network.

All randomness comes from Philox (a counter-based generator) keyed by
``SeedSequence([seed, index])``, so scene ``index`` of a batch is the same no
matter how many scenes are generated or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Keypoint, Pose, Scene, SkeletonSpec, Visibility, pose_iou
from .fields import B_MIN, PafField, PifField


class UnsatisfiableSceneError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneParams:
    poses_per_scene: tuple[int, int] = (1, 5)
    height_range: tuple[float, float] = (40.0, 200.0)  # bbox height, px
    max_iou: float = 0.0
    image_size: tuple[int, int] = (640, 480)
    min_gap: float = 0.0  # extra px between boxes when max_iou == 0
    active_types: tuple[int, ...] | None = None  # keypoint types left labeled
    max_attempts: int = 500


def rng_for(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def articulated_figure(rng: np.random.Generator) -> np.ndarray:
    """17 COCO keypoints of a random 2D stick figure, y down, unit-ish height.

    The figure faces the camera, so the person's left side is at +x.
    """
    lean = rng.uniform(-0.2, 0.2)
    width = rng.uniform(0.55, 1.0)  # foreshortening from body yaw
    torso = _rot(lean)
    pelvis = np.array([0.0, 0.5])
    neck = pelvis + torso @ np.array([0.0, -0.32])
    kp = np.zeros((17, 2))
    kp[11] = pelvis + torso @ np.array([0.08 * width, 0.0])
    kp[12] = pelvis + torso @ np.array([-0.08 * width, 0.0])
    kp[5] = neck + torso @ np.array([0.12 * width, 0.01])
    kp[6] = neck + torso @ np.array([-0.12 * width, 0.01])

    head = torso @ _rot(rng.uniform(-0.3, 0.3))
    yaw = rng.uniform(-0.4, 0.4)
    nose = neck + head @ np.array([0.0, -0.12])
    kp[0] = nose + head @ np.array([0.03 * yaw, 0.0])
    kp[1] = nose + head @ np.array([0.025, -0.022])
    kp[2] = nose + head @ np.array([-0.025, -0.022])
    kp[3] = nose + head @ np.array([0.055 - 0.02 * yaw, -0.008])
    kp[4] = nose + head @ np.array([-0.055 - 0.02 * yaw, -0.008])

    for side, sh, el, wr in ((1.0, 5, 7, 9), (-1.0, 6, 8, 10)):
        upper = rng.uniform(-0.3, 2.6)
        lower = upper + rng.uniform(-0.2, 2.2)
        kp[el] = kp[sh] + 0.17 * np.array([side * math.sin(upper), math.cos(upper)])
        kp[wr] = kp[el] + 0.15 * np.array([side * math.sin(lower), math.cos(lower)])
    for side, hip, kn, an in ((1.0, 11, 13, 15), (-1.0, 12, 14, 16)):
        thigh = rng.uniform(-0.15, 0.5)
        shin = thigh + rng.uniform(-0.6, 0.2)
        kp[kn] = kp[hip] + 0.24 * np.array([side * math.sin(thigh), math.cos(thigh)])
        kp[an] = kp[kn] + 0.23 * np.array([side * math.sin(shin), math.cos(shin)])

    if rng.random() < 0.5:
        # seen from the back: mirror the geometry, names stay attached
        kp[:, 0] = -kp[:, 0]
    return kp


_PAD = 0.06  # box padding around the keypoint extent, fraction of box height


def _place_pose(rng, params: SceneParams, boxes: list, instance_id: int,
                skeleton: SkeletonSpec) -> tuple[Pose, tuple] | None:
    width, height = params.image_size
    for _ in range(params.max_attempts):
        kp = articulated_figure(rng)
        target_h = rng.uniform(*params.height_range)
        ext = kp.max(axis=0) - kp.min(axis=0)
        scale = target_h * (1 - 2 * _PAD) / ext[1]
        pad = _PAD * target_h
        box_w = ext[0] * scale + 2 * pad
        box_h = target_h
        if box_w > width - 1 or box_h > height - 1:
            continue
        x0 = rng.uniform(0, width - 1 - box_w)
        y0 = rng.uniform(0, height - 1 - box_h)
        box = (x0, y0, x0 + box_w, y0 + box_h)
        if params.max_iou <= 0:
            g = params.min_gap
            ok = all(box[2] + g <= b[0] or b[2] + g <= box[0] or box[3] + g <= b[1] or b[3] + g <= box[1]
                     for b in boxes)
        else:
            ok = all(pose_iou(box, b) <= params.max_iou for b in boxes)
        if not ok:
            continue
        xy = (kp - kp.min(axis=0)) * scale + np.array([x0 + pad, y0 + pad])
        labeled = np.ones(17, dtype=bool)
        if params.active_types is not None:
            labeled[:] = False
            labeled[list(params.active_types)] = True
        kps = tuple(
            Keypoint(float(x), float(y), Visibility.VISIBLE if lab else Visibility.UNLABELED)
            if lab else Keypoint(0.0, 0.0, Visibility.UNLABELED)
            for (x, y), lab in zip(xy, labeled)
        )
        return Pose(kps, box_w * box_h, instance_id), box
    return None


def generate_scene(seed: int, index: int, params: SceneParams, skeleton: SkeletonSpec) -> Scene:
    rng = rng_for(seed, index)
    lo, hi = params.poses_per_scene
    for _ in range(20):
        n = int(rng.integers(lo, hi + 1))
        boxes: list = []
        poses = []
        for pid in range(n):
            placed = _place_pose(rng, params, boxes, pid, skeleton)
            if placed is None:
                break
            poses.append(placed[0])
            boxes.append(placed[1])
        else:
            scene = Scene(params.image_size[0], params.image_size[1], tuple(poses))
            scene.validate(skeleton)
            return scene
    raise UnsatisfiableSceneError(
        f"could not place poses with max_iou={params.max_iou} in {params.image_size} after retries"
    )


def generate_scenes(seed: int, n_scenes: int, params: SceneParams, skeleton: SkeletonSpec) -> list[Scene]:
    return [generate_scene(seed, i, params, skeleton) for i in range(n_scenes)]


def pose_box(pose: Pose) -> tuple[float, float, float, float]:
    """Recover the generator's padded bbox from the keypoint extent."""
    x0, y0, x1, y1 = pose.keypoint_bbox()
    h = (y1 - y0) / (1 - 2 * _PAD)
    pad = _PAD * h
    return x0 - pad, y0 - pad, x1 + pad, y1 + pad


# -- field noise -----------------------------------------------------------


@dataclass(frozen=True)
class FieldNoise:
    sigma_c: float = 0.0  # confidence jitter
    sigma_v: float = 0.0  # vector jitter scale, cells
    p_dropout: float = 0.0
    calibrated: bool = False  # per-cell Laplace jitter whose scale is written into b

    def is_zero(self) -> bool:
        return self.sigma_c == 0 and self.sigma_v == 0 and self.p_dropout == 0


def _perturb(data: np.ndarray, rng: np.random.Generator, noise: FieldNoise,
             vectors: tuple, spreads: tuple) -> np.ndarray:
    out = data.astype(np.float64, copy=True)
    c = out[:, 0]
    active = c > 0
    if noise.sigma_v > 0:
        for (cx, cy), cb in zip(vectors, spreads):
            if noise.calibrated:
                # heavy-tailed per-cell spread; jitter drawn from the matching Laplace
                b = noise.sigma_v * np.exp(rng.normal(0.0, 0.75, size=c.shape))
                jx = rng.laplace(0.0, 1.0, size=c.shape) * b
                jy = rng.laplace(0.0, 1.0, size=c.shape) * b
                out[:, cb] = np.where(active, np.maximum(b, B_MIN), out[:, cb])
            else:
                jx = rng.normal(0.0, noise.sigma_v, size=c.shape)
                jy = rng.normal(0.0, noise.sigma_v, size=c.shape)
            out[:, cx] += np.where(active, jx, 0.0)
            out[:, cy] += np.where(active, jy, 0.0)
    if noise.sigma_c > 0:
        c += rng.normal(0.0, noise.sigma_c, size=c.shape)
    if noise.p_dropout > 0:
        c[rng.random(c.shape) < noise.p_dropout] = 0.0
    np.clip(c, 0.0, 1.0, out=c)
    return out.astype(np.float32)


def perturb_fields(pif: PifField, paf: PafField, noise: FieldNoise, seed: int) -> tuple[PifField, PafField]:
    """Jitter confidences and vectors, drop random cells; deterministic in ``seed``."""
    if noise.is_zero():
        return pif.copy(), paf.copy()
    rng = rng_for(seed, 0x5EED)
    pif_out = _perturb(pif.data, rng, noise, vectors=((1, 2),), spreads=(3,))
    paf_out = _perturb(paf.data, rng, noise, vectors=((1, 2), (4, 5)), spreads=(3, 6))
    return PifField(pif.geometry, pif_out), PafField(paf.geometry, paf_out)
