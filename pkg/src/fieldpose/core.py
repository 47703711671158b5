"""Skeleton, pose and scene types shared by every stage of the codec."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

COCO_KEYPOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

# COCO person skeleton, 0-based, each edge oriented proximal -> distal.
COCO_CONNECTIONS = (
    (13, 15),
    (11, 13),
    (14, 16),
    (12, 14),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
)

# COCO OKS falloff k_i = 2 * sigma_i.
COCO_KAPPA = tuple(
    2.0 * s / 10.0
    for s in (0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72, 0.62, 0.62, 1.07, 1.07, 0.87, 0.87, 0.89, 0.89)
)

COCO_FLIP_PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))


class SceneError(ValueError):
    """Raised when a scene or pose violates its invariants."""


class Visibility(enum.IntEnum):
    UNLABELED = 0
    OCCLUDED = 1
    VISIBLE = 2


@dataclass(frozen=True)
class SkeletonSpec:
    keypoint_names: tuple[str, ...]
    connections: tuple[tuple[int, int], ...]
    kappa: tuple[float, ...]
    flip_pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.keypoint_names)
        if len(self.kappa) != n:
            raise ValueError("kappa needs one entry per keypoint")
        if any(k <= 0 for k in self.kappa):
            raise ValueError("kappa entries must be positive")
        for a, b in self.connections:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"invalid connection ({a}, {b})")
        for a, b in self.flip_pairs:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"invalid flip pair ({a}, {b})")

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoint_names)

    @property
    def n_connections(self) -> int:
        return len(self.connections)

    def flip_permutation(self) -> np.ndarray:
        perm = np.arange(self.n_keypoints)
        for a, b in self.flip_pairs:
            perm[a], perm[b] = b, a
        return perm

    def is_connected(self) -> bool:
        n = self.n_keypoints
        adjacency = [[] for _ in range(n)]
        for a, b in self.connections:
            adjacency[a].append(b)
            adjacency[b].append(a)
        seen = {0}
        stack = [0]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == n


def build_coco_skeleton(kappa: Sequence[float] | None = None) -> SkeletonSpec:
    """The 17-keypoint, 19-connection COCO person skeleton.

    ``kappa`` overrides the bundled COCO falloff constants.
    """
    spec = SkeletonSpec(
        keypoint_names=COCO_KEYPOINTS,
        connections=COCO_CONNECTIONS,
        kappa=tuple(float(k) for k in (COCO_KAPPA if kappa is None else kappa)),
        flip_pairs=COCO_FLIP_PAIRS,
    )
    if spec.n_keypoints != 17 or spec.n_connections != 19:
        raise AssertionError("COCO skeleton must have 17 keypoints and 19 connections")
    return spec


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    visibility: Visibility = Visibility.VISIBLE

    @property
    def labeled(self) -> bool:
        return self.visibility != Visibility.UNLABELED


@dataclass(frozen=True)
class Pose:
    keypoints: tuple[Keypoint, ...]
    bbox_area: float
    instance_id: int = 0

    def __post_init__(self):
        if not self.bbox_area > 0 or not math.isfinite(self.bbox_area):
            raise SceneError(f"pose {self.instance_id}: bbox_area must be positive, got {self.bbox_area}")
        if not any(kp.labeled for kp in self.keypoints):
            raise SceneError(f"pose {self.instance_id}: no labeled keypoints")
        for kp in self.keypoints:
            if kp.labeled and not (math.isfinite(kp.x) and math.isfinite(kp.y)):
                raise SceneError(f"pose {self.instance_id}: labeled keypoint with non-finite coordinates")

    @classmethod
    def from_array(cls, xyv: np.ndarray, bbox_area: float, instance_id: int = 0) -> "Pose":
        xyv = np.asarray(xyv, dtype=np.float64).reshape(-1, 3)
        kps = tuple(Keypoint(float(x), float(y), Visibility(int(v))) for x, y, v in xyv)
        return cls(kps, float(bbox_area), instance_id)

    def to_array(self) -> np.ndarray:
        """(n_keypoints, 3) array of x, y, visibility."""
        return np.array([(kp.x, kp.y, int(kp.visibility)) for kp in self.keypoints], dtype=np.float64)

    @property
    def labeled_mask(self) -> np.ndarray:
        return np.array([kp.labeled for kp in self.keypoints])

    def keypoint_bbox(self) -> tuple[float, float, float, float]:
        """x0, y0, x1, y1 of the labeled keypoints."""
        xyv = self.to_array()[self.labeled_mask]
        return float(xyv[:, 0].min()), float(xyv[:, 1].min()), float(xyv[:, 0].max()), float(xyv[:, 1].max())


@dataclass(frozen=True)
class Scene:
    width: int
    height: int
    poses: tuple[Pose, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SceneError(f"scene dimensions must be positive, got {self.width}x{self.height}")

    def validate(self, skeleton: SkeletonSpec | None = None) -> None:
        for pose in self.poses:
            if skeleton is not None and len(pose.keypoints) != skeleton.n_keypoints:
                raise SceneError(
                    f"pose {pose.instance_id}: expected {skeleton.n_keypoints} keypoints, got {len(pose.keypoints)}"
                )
            for k, kp in enumerate(pose.keypoints):
                if not kp.labeled:
                    continue
                if not (0 <= kp.x < self.width and 0 <= kp.y < self.height):
                    raise SceneError(
                        f"pose {pose.instance_id} keypoint {k} at ({kp.x:.2f}, {kp.y:.2f}) "
                        f"outside {self.width}x{self.height} image"
                    )


def flip_horizontal(scene: Scene, skeleton: SkeletonSpec) -> Scene:
    """Mirror a scene left-right and swap left/right keypoint slots."""
    perm = skeleton.flip_permutation()
    poses = []
    for pose in scene.poses:
        kps = []
        for k in range(len(pose.keypoints)):
            src = pose.keypoints[perm[k]]
            x = scene.width - 1 - src.x if src.labeled else src.x
            kps.append(replace(src, x=x))
        poses.append(replace(pose, keypoints=tuple(kps)))
    return replace(scene, poses=tuple(poses))


def pose_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two (x0, y0, x1, y1) boxes."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


# -- COCO-style JSON --------------------------------------------------------


def scene_to_dict(scene: Scene) -> dict:
    return {
        "width": scene.width,
        "height": scene.height,
        "annotations": [
            {
                "id": pose.instance_id,
                "keypoints": [round(v, 6) if i % 3 != 2 else int(v) for i, v in enumerate(pose.to_array().ravel())],
                "num_keypoints": int(pose.labeled_mask.sum()),
                "area": pose.bbox_area,
            }
            for pose in scene.poses
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    try:
        poses = tuple(
            Pose.from_array(np.asarray(ann["keypoints"], dtype=np.float64), ann["area"], int(ann.get("id", i)))
            for i, ann in enumerate(data["annotations"])
        )
        return Scene(int(data["width"]), int(data["height"]), poses)
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene document: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(f"malformed scene document: {exc}") from exc


def write_scene(path: str | Path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1) + "\n")


def read_scene(path: str | Path) -> Scene:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON ({exc})") from exc
    return scene_from_dict(data)
