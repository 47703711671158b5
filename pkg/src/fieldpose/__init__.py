"""Composite-field (PIF/PAF) codec and greedy multi-person pose decoder."""

from .core import (COCO_CONNECTIONS, COCO_KAPPA, COCO_KEYPOINTS, Keypoint, Pose, Scene, SceneError,
                   SkeletonSpec, Visibility, build_coco_skeleton, read_scene, write_scene)
from .decoder import DecodedPose, DecoderConfig, decode
from .encoder import EncoderConfig, encode
from .fields import FieldGeometry, PafField, PifField, read_fields, write_fields
from .fusion import FusionConfig, HighResMap, fuse
from .metrics import evaluate, oks, pck
from .oracle import brute_force_decode

__version__ = "0.1.0"

__all__ = [
    "COCO_CONNECTIONS", "COCO_KAPPA", "COCO_KEYPOINTS", "DecodedPose", "DecoderConfig", "EncoderConfig",
    "FieldGeometry", "FusionConfig", "HighResMap", "Keypoint", "PafField", "PifField", "Pose", "Scene",
    "SceneError", "SkeletonSpec", "Visibility", "brute_force_decode", "build_coco_skeleton", "decode",
    "encode", "evaluate", "fuse", "oks", "pck", "read_fields", "read_scene", "write_fields", "write_scene",
]
