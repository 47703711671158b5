"""Dense PIF/PAF containers and the ``.fields`` binary format.

Layout of a ``.fields`` file (all integers little-endian):

    offset  size  content
    0       4     magic ``b"PFLD"``
    4       1     format version (1)
    5       3     reserved, zero
    8       4     uint32 stride (image px per cell)
    12      4     uint32 grid_w
    16      4     uint32 grid_h
    20      4     uint32 number of PIF planes (keypoint types)
    24      4     uint32 PIF channels (5: c, dx, dy, b, sigma)
    28      4     uint32 number of PAF planes (connections)
    32      4     uint32 PAF channels (7: c, dx1, dy1, b1, dx2, dy2, b2)
    36      ...   float32 PIF payload, [type, channel, row, col] order
    ...     ...   float32 PAF payload, same order

Offsets are relative to the cell origin in cell units: the absolute field
coordinate of a regressed target at cell (i, j) is (i + dx, j + dy), and the
image coordinate is that times the stride.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SkeletonSpec

B_MIN = 1e-3
SIGMA_MIN = 1e-3

PIF_CHANNELS = ("c", "dx", "dy", "b", "sigma")
PAF_CHANNELS = ("c", "dx1", "dy1", "b1", "dx2", "dy2", "b2")

MAGIC = b"PFLD"
VERSION = 1
_HEADER = struct.Struct("<4sB3xIIIIIII")


class FieldFormatError(ValueError):
    """Base class for ``.fields`` decoding failures."""


class MalformedHeaderError(FieldFormatError):
    pass


class DimensionMismatchError(FieldFormatError):
    pass


class TruncatedPayloadError(FieldFormatError):
    pass


@dataclass(frozen=True)
class FieldGeometry:
    stride: int
    grid_w: int
    grid_h: int

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.grid_w < 1 or self.grid_h < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.grid_w}x{self.grid_h}")

    @classmethod
    def for_image(cls, width: int, height: int, stride: int = 8) -> "FieldGeometry":
        return cls(stride, math.ceil(width / stride), math.ceil(height / stride))

    @property
    def extent(self) -> tuple[int, int]:
        """Image-pixel width and height spanned by the grid."""
        return self.grid_w * self.stride, self.grid_h * self.stride


@dataclass
class PifField:
    """Per-keypoint-type composite field, ``data`` shaped (types, 5, grid_h, grid_w)."""

    geometry: FieldGeometry
    data: np.ndarray

    @property
    def c(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def n_types(self) -> int:
        return self.data.shape[0]

    def validate(self) -> None:
        _check_fields(self.data, spread_channels=(3, 4), floors=(B_MIN, SIGMA_MIN))

    def copy(self) -> "PifField":
        return PifField(self.geometry, self.data.copy())


@dataclass
class PafField:
    """Per-connection composite field, ``data`` shaped (connections, 7, grid_h, grid_w)."""

    geometry: FieldGeometry
    data: np.ndarray

    @property
    def c(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def n_types(self) -> int:
        return self.data.shape[0]

    def validate(self) -> None:
        _check_fields(self.data, spread_channels=(3, 6), floors=(B_MIN, B_MIN))

    def copy(self) -> "PafField":
        return PafField(self.geometry, self.data.copy())


def _check_fields(data: np.ndarray, spread_channels, floors) -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError("field contains non-finite values")
    c = data[:, 0]
    if c.min(initial=0.0) < 0.0 or c.max(initial=0.0) > 1.0:
        raise ValueError("confidence outside [0, 1]")
    active = c > 0
    for ch, floor in zip(spread_channels, floors):
        # float32 storage of the floor value
        if np.any(data[:, ch][active] < np.float32(floor)):
            raise ValueError(f"channel {ch} below its floor {floor} at a confident cell")


def new_fields(geometry: FieldGeometry, skeleton: SkeletonSpec) -> tuple[PifField, PafField]:
    """Zero-confidence fields with spreads and scales at their floors."""
    shape = (geometry.grid_h, geometry.grid_w)
    pif = np.zeros((skeleton.n_keypoints, len(PIF_CHANNELS)) + shape, dtype=np.float32)
    pif[:, 3] = B_MIN
    pif[:, 4] = SIGMA_MIN
    paf = np.zeros((skeleton.n_connections, len(PAF_CHANNELS)) + shape, dtype=np.float32)
    paf[:, 3] = B_MIN
    paf[:, 6] = B_MIN
    return PifField(geometry, pif), PafField(geometry, paf)


def fields_to_bytes(pif: PifField, paf: PafField) -> bytes:
    if pif.geometry != paf.geometry:
        raise DimensionMismatchError("PIF and PAF geometries differ")
    g = pif.geometry
    header = _HEADER.pack(
        MAGIC, VERSION, g.stride, g.grid_w, g.grid_h,
        pif.data.shape[0], pif.data.shape[1], paf.data.shape[0], paf.data.shape[1],
    )
    return b"".join((
        header,
        np.ascontiguousarray(pif.data, dtype="<f4").tobytes(),
        np.ascontiguousarray(paf.data, dtype="<f4").tobytes(),
    ))


def fields_from_bytes(buf: bytes, skeleton: SkeletonSpec | None = None) -> tuple[PifField, PafField]:
    if len(buf) < _HEADER.size:
        raise MalformedHeaderError(f"header needs {_HEADER.size} bytes, got {len(buf)}")
    magic, version, stride, gw, gh, n_pif, c_pif, n_paf, c_paf = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MalformedHeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeaderError(f"unsupported version {version}")
    if stride < 1 or gw < 1 or gh < 1:
        raise MalformedHeaderError(f"invalid geometry stride={stride} grid={gw}x{gh}")
    if c_pif != len(PIF_CHANNELS) or c_paf != len(PAF_CHANNELS):
        raise DimensionMismatchError(f"channel counts {c_pif}/{c_paf}, expected 5/7")
    if skeleton is not None and (n_pif != skeleton.n_keypoints or n_paf != skeleton.n_connections):
        raise DimensionMismatchError(
            f"file has {n_pif} PIF / {n_paf} PAF planes, skeleton needs "
            f"{skeleton.n_keypoints} / {skeleton.n_connections}"
        )
    geometry = FieldGeometry(stride, gw, gh)
    pif_shape = (n_pif, c_pif, gh, gw)
    paf_shape = (n_paf, c_paf, gh, gw)
    n_pif_vals = int(np.prod(pif_shape))
    n_paf_vals = int(np.prod(paf_shape))
    expected = _HEADER.size + 4 * (n_pif_vals + n_paf_vals)
    if len(buf) < expected:
        raise TruncatedPayloadError(f"payload has {len(buf)} bytes, header promises {expected}")
    if len(buf) > expected:
        raise DimensionMismatchError(f"{len(buf) - expected} trailing bytes after payload")
    values = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size)
    pif = values[:n_pif_vals].reshape(pif_shape).astype(np.float32)
    paf = values[n_pif_vals:].reshape(paf_shape).astype(np.float32)
    return PifField(geometry, pif), PafField(geometry, paf)


def write_fields(path: str | Path, pif: PifField, paf: PafField) -> None:
    Path(path).write_bytes(fields_to_bytes(pif, paf))


def read_fields(path: str | Path, skeleton: SkeletonSpec | None = None) -> tuple[PifField, PafField]:
    return fields_from_bytes(Path(path).read_bytes(), skeleton)
