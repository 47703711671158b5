"""Greedy decoding of PIF/PAF fields into multi-person poses.

Poses are seeded at maxima of the fused confidence maps and grown along the
skeleton one connection at a time, always taking the best-scoring frontier
move. A placed joint is never moved again. Keypoint-level suppression with a
scale-dependent radius removes duplicates at the end.

Because PAF targets store their nearest endpoint in vector 1, the role of
"source vector" is relative to the joint being queried: every PAF cell is
scored in both orientations and the better one is kept.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import maximum_filter

from .core import SkeletonSpec
from .fields import B_MIN, PafField, PifField
from .fusion import FusionConfig, HighResMap, fuse


class GeometryMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    seed_threshold: float = 0.5
    keypoint_threshold: float = 0.1
    use_b_in_decoder: bool = True
    nms_scale_factor: float = 1.0
    nms_min_radius: float = 3.0  # px
    reverse_match_tolerance: float = 2.0  # multiples of the stride
    max_poses: int = 20
    w_assoc: int = 5  # cells
    hr_stride: int = 2
    fusion_cutoff: float = 0.1
    pif_neighbors: float = 16.0  # fused maps are divided by this

    def __post_init__(self):
        for name in ("seed_threshold", "keypoint_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.nms_scale_factor <= 0 or self.nms_min_radius <= 0 or self.reverse_match_tolerance <= 0:
            raise ValueError("radii must be positive")
        if self.max_poses < 0 or self.w_assoc < 1:
            raise ValueError("max_poses must be >= 0 and w_assoc >= 1")

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(hr_stride=self.hr_stride, cutoff=self.fusion_cutoff, normalization=self.pif_neighbors)


@dataclass(frozen=True)
class DecodedPose:
    joints: np.ndarray  # (n_keypoints, 3): x, y, confidence
    present: np.ndarray  # (n_keypoints,) bool
    score: float
    links: tuple = field(default=(), compare=False)  # (connection, from_type, to_type, score)

    @classmethod
    def build(cls, joints: np.ndarray, present: np.ndarray, links: tuple = ()) -> "DecodedPose":
        joints = np.array(joints, dtype=np.float64)
        present = np.array(present, dtype=bool)
        joints[~present] = 0.0
        score = float(joints[present, 2].mean()) if present.any() else 0.0
        return cls(joints, present, score, links)

    @property
    def n_present(self) -> int:
        return int(self.present.sum())

    def to_result(self) -> dict:
        return {
            "keypoints": [round(float(v), 4) for v in self.joints.ravel()],
            "score": round(self.score, 6),
        }

    @classmethod
    def from_result(cls, result: dict) -> "DecodedPose":
        joints = np.asarray(result["keypoints"], dtype=np.float64).reshape(-1, 3)
        return cls.build(joints, joints[:, 2] > 0)


@dataclass(frozen=True)
class Seed:
    keypoint_type: int
    x: float
    y: float
    confidence: float


# -- seeds -----------------------------------------------------------------


def _refine_axis(lo: float, mid: float, hi: float) -> float:
    """Vertex offset of the parabola through three samples, in sample units."""
    if lo > 0 and mid > 0 and hi > 0:
        lo, mid, hi = math.log(lo), math.log(mid), math.log(hi)
    denom = lo - 2.0 * mid + hi
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (lo - hi) / denom, -0.5, 0.5))


def refine_peak(plane: np.ndarray, v: int, u: int) -> tuple[float, float]:
    """Sub-raster (u, v) of a local maximum from its 3x3 neighbourhood."""
    h, w = plane.shape
    du = _refine_axis(plane[v, u - 1], plane[v, u], plane[v, u + 1]) if 0 < u < w - 1 else 0.0
    dv = _refine_axis(plane[v - 1, u], plane[v, u], plane[v + 1, u]) if 0 < v < h - 1 else 0.0
    return u + du, v + dv


def seed_candidates(highres: HighResMap, threshold: float = 0.5,
                    types: Optional[range] = None) -> list[Seed]:
    """Local maxima of every fused plane above ``threshold``, strongest first."""
    seeds = []
    hr = highres.hr_stride
    for k in types if types is not None else range(highres.n_types):
        plane = highres.values[k]
        if plane.max(initial=0.0) < threshold or plane.max(initial=0.0) <= 0:
            continue
        # only the neighbourhood of above-threshold points can hold seeds
        rows = np.nonzero((plane >= threshold).any(axis=1))[0]
        cols = np.nonzero((plane >= threshold).any(axis=0))[0]
        v0, u0 = max(rows[0] - 1, 0), max(cols[0] - 1, 0)
        crop = plane[v0:rows[-1] + 2, u0:cols[-1] + 2]
        is_max = (crop == maximum_filter(crop, size=3, mode="constant", cval=0.0)) & (crop >= threshold) & (crop > 0)
        found = []
        for v, u in zip(*np.nonzero(is_max)):
            v, u = v + v0, u + u0
            fu, fv = refine_peak(plane, v, u)
            found.append(Seed(k, fu * hr, fv * hr, float(plane[v, u])))
        # plateau maxima (equal neighbours) refine to one point; keep one of them
        found.sort(key=lambda s: (-s.confidence, s.y, s.x))
        kept: list[Seed] = []
        for s in found:
            if all(math.hypot(s.x - o.x, s.y - o.y) >= hr for o in kept):
                kept.append(s)
        seeds.extend(kept)
    seeds.sort(key=lambda s: (-s.confidence, s.keypoint_type, s.y, s.x))
    return seeds


# -- association scoring ---------------------------------------------------


def score_association(assoc, cell: tuple[int, int], source: tuple[float, float], highres: HighResMap,
                      target_type: int, stride: int, use_b: bool = True) -> float:
    """Score of one PAF cell for a move starting at ``source`` (image px).

    ``assoc`` holds the seven PAF channels of the cell at ``cell = (i, j)``.
    Vector 1 is the source end, vector 2 the proposed target. The confidence
    at the target is capped at 1.
    """
    c, dx1, dy1, b1, dx2, dy2, _ = (float(v) for v in assoc)
    i, j = cell
    a1x, a1y = (i + dx1) * stride, (j + dy1) * stride
    a2x, a2y = (i + dx2) * stride, (j + dy2) * stride
    spread = max(b1, B_MIN) * stride if use_b else float(stride)
    f2 = min(1.0, highres.query(target_type, a2x, a2y))
    return c * math.exp(-math.hypot(source[0] - a1x, source[1] - a1y) / spread) * f2


def _window(paf: PafField, ci: int, x: float, y: float, w_assoc: int):
    g = paf.geometry
    half = w_assoc // 2
    ic, jc = int(round(x / g.stride)), int(round(y / g.stride))
    i0, i1 = max(0, ic - half), min(g.grid_w, ic - half + w_assoc)
    j0, j1 = max(0, jc - half), min(g.grid_h, jc - half + w_assoc)
    if i0 >= i1 or j0 >= j1:
        return None
    block = paf.data[ci, :, j0:j1, i0:i1]
    active = block[0] > 0
    if not active.any():
        return None
    jj, ii = np.nonzero(active)
    vals = block[:, jj, ii].astype(np.float64)
    return ii + i0, jj + j0, vals


def best_association(paf: PafField, ci: int, source: tuple[float, float], highres: HighResMap,
                     target_type: int, config: DecoderConfig) -> tuple[float, float, float]:
    """Best move along connection ``ci`` from ``source``: (score, target x, target y)."""
    cells = _window(paf, ci, source[0], source[1], config.w_assoc)
    if cells is None:
        return 0.0, math.nan, math.nan
    ii, jj, vals = cells
    stride = paf.geometry.stride
    c = vals[0]
    p1x, p1y = (ii + vals[1]) * stride, (jj + vals[2]) * stride
    p2x, p2y = (ii + vals[4]) * stride, (jj + vals[5]) * stride
    if config.use_b_in_decoder:
        s1 = np.maximum(vals[3], B_MIN) * stride
        s2 = np.maximum(vals[6], B_MIN) * stride
    else:
        s1 = s2 = float(stride)
    sx, sy = source
    # both orientations: (from vector 1 to vector 2) and (from 2 to 1)
    from_x = np.concatenate((p1x, p2x))
    from_y = np.concatenate((p1y, p2y))
    to_x = np.concatenate((p2x, p1x))
    to_y = np.concatenate((p2y, p1y))
    spread = np.concatenate((np.broadcast_to(s1, c.shape), np.broadcast_to(s2, c.shape)))
    f2 = np.minimum(1.0, highres.query(target_type, to_x, to_y))
    scores = np.tile(c, 2) * np.exp(-np.hypot(sx - from_x, sy - from_y) / spread) * f2
    best = int(np.argmax(scores))
    return float(scores[best]), float(to_x[best]), float(to_y[best])


def reverse_match(ci: int, source_type: int, placed_source: tuple[float, float],
                  proposed_target: tuple[float, float], paf: PafField, highres: HighResMap,
                  config: DecoderConfig) -> bool:
    """Accept a forward move if the best backward association along the same
    connection lands near the joint the move started from."""
    score, rx, ry = best_association(paf, ci, proposed_target, highres, source_type, config)
    if not score >= config.keypoint_threshold or score <= 0:
        return False
    tolerance = config.reverse_match_tolerance * paf.geometry.stride
    return math.hypot(rx - placed_source[0], ry - placed_source[1]) <= tolerance


# -- pose growth -----------------------------------------------------------


def joint_confidence(highres: HighResMap, k: int, x: float, y: float) -> float:
    return min(1.0, highres.query(k, x, y))


def grow_pose(seed: Seed, paf: PafField, highres: HighResMap, skeleton: SkeletonSpec,
              config: DecoderConfig = DecoderConfig(),
              on_place: Optional[Callable[[int, float, float], None]] = None) -> DecodedPose:
    n = skeleton.n_keypoints
    joints = np.zeros((n, 3))
    present = np.zeros(n, dtype=bool)
    links = []
    frontier: list = []
    tiebreak = itertools.count()

    def place(k, x, y, conf):
        joints[k] = (x, y, conf)
        present[k] = True
        if on_place is not None:
            on_place(k, x, y)
        for ci, (a, b) in enumerate(skeleton.connections):
            if a == k:
                other = b
            elif b == k:
                other = a
            else:
                continue
            if present[other]:
                continue
            s, tx, ty = best_association(paf, ci, (x, y), highres, other, config)
            if s > 0:
                heapq.heappush(frontier, (-s, next(tiebreak), ci, k, other, tx, ty, False))

    place(seed.keypoint_type, seed.x, seed.y,
          joint_confidence(highres, seed.keypoint_type, seed.x, seed.y))
    while frontier:
        neg_s, _, ci, src, dst, tx, ty, retried = heapq.heappop(frontier)
        if present[dst]:
            continue
        if not retried and not reverse_match(ci, src, (joints[src, 0], joints[src, 1]), (tx, ty),
                                             paf, highres, config):
            heapq.heappush(frontier, (neg_s / 2.0, next(tiebreak), ci, src, dst, tx, ty, True))
            continue
        conf = joint_confidence(highres, dst, tx, ty)
        if conf < config.keypoint_threshold:
            continue
        links.append((ci, src, dst, -neg_s))
        place(dst, tx, ty, conf)
    return DecodedPose.build(joints, present, tuple(links))


# -- suppression and the full pipeline --------------------------------------


def suppression_radius(highres: HighResMap, k: int, x: float, y: float, config: DecoderConfig) -> float:
    return max(config.nms_scale_factor * highres.scale_at(k, x, y), config.nms_min_radius)


def nms_keypoints(poses: list[DecodedPose], highres: HighResMap,
                  config: DecoderConfig = DecoderConfig()) -> list[DecodedPose]:
    """Suppress joints already claimed by a higher-scoring pose, then rescore.

    The radius is the predicted joint scale times ``nms_scale_factor``, at
    least ``nms_min_radius`` px. Poses left without joints are dropped.
    """
    order = sorted(range(len(poses)), key=lambda i: -poses[i].score)
    n = poses[0].joints.shape[0] if poses else 0
    occupied: list[list[tuple[float, float]]] = [[] for _ in range(n)]
    kept = []
    for idx in order:
        pose = poses[idx]
        present = pose.present.copy()
        joints = pose.joints.copy()
        for k in np.nonzero(present)[0]:
            x, y = joints[k, 0], joints[k, 1]
            r = suppression_radius(highres, k, x, y, config)
            if any(math.hypot(x - ox, y - oy) < r for ox, oy in occupied[k]):
                present[k] = False
                joints[k] = 0.0
        for k in np.nonzero(present)[0]:
            occupied[k].append((joints[k, 0], joints[k, 1]))
        if present.any():
            kept.append(DecodedPose.build(joints, present, pose.links))
    kept.sort(key=lambda p: -p.score)
    return kept


def check_geometry(pif: PifField, paf: PafField, skeleton: SkeletonSpec) -> None:
    if pif.geometry != paf.geometry:
        raise GeometryMismatchError(f"PIF geometry {pif.geometry} != PAF geometry {paf.geometry}")
    if pif.n_types != skeleton.n_keypoints or paf.n_types != skeleton.n_connections:
        raise GeometryMismatchError("field plane counts do not match the skeleton")


def decode(pif: PifField, paf: PafField, skeleton: SkeletonSpec,
           config: DecoderConfig = DecoderConfig(), highres: Optional[HighResMap] = None) -> list[DecodedPose]:
    check_geometry(pif, paf, skeleton)
    if highres is None:
        highres = fuse(pif, config.fusion_config())
    poses: list[DecodedPose] = []
    placed: list[list[tuple[float, float]]] = [[] for _ in range(skeleton.n_keypoints)]
    for seed in seed_candidates(highres, config.seed_threshold):
        k = seed.keypoint_type
        r = suppression_radius(highres, k, seed.x, seed.y, config)
        if any(math.hypot(seed.x - px, seed.y - py) < r for px, py in placed[k]):
            continue
        pose = grow_pose(seed, paf, highres, skeleton, config)
        poses.append(pose)
        for j in np.nonzero(pose.present)[0]:
            placed[j].append((pose.joints[j, 0], pose.joints[j, 1]))
    poses = nms_keypoints(poses, highres, config)
    return poses[:config.max_poses]
