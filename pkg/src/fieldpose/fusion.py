"""High-resolution part confidence maps fused from a PIF field.

Every PIF cell with confidence above the cutoff deposits an unnormalized
Gaussian (peak value 1, width = its regressed scale) at its regressed target,
weighted by its confidence. The sum is rasterized at ``hr_stride`` image
pixels; continuous values come from bilinear interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import PifField


@dataclass(frozen=True)
class FusionConfig:
    hr_stride: int = 2
    cutoff: float = 0.1
    truncate: float = 3.0  # kernel support, in sigmas
    normalization: float = 1.0  # every contribution is divided by this

    def __post_init__(self):
        if self.hr_stride < 1:
            raise ValueError("hr_stride must be >= 1")
        if self.truncate <= 0 or self.normalization <= 0:
            raise ValueError("truncate and normalization must be positive")


@dataclass(frozen=True)
class HighResMap:
    """Fused confidence rasters, one plane per keypoint type.

    Raster point (u, v) sits at image pixel (u * hr_stride, v * hr_stride).
    ``scales`` holds the confidence-weighted mean kernel width (image px)
    at every raster point, used for dynamic suppression radii.
    """

    values: np.ndarray
    scales: np.ndarray
    hr_stride: int

    @property
    def n_types(self) -> int:
        return self.values.shape[0]

    def _bilinear(self, plane: np.ndarray, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        h, w = plane.shape
        u = x / self.hr_stride
        v = y / self.hr_stride
        inside = (u >= 0) & (v >= 0) & (u <= w - 1) & (v <= h - 1)
        u = np.where(inside, u, 0.0)
        v = np.where(inside, v, 0.0)
        u0 = np.minimum(np.floor(u).astype(np.intp), max(w - 2, 0))
        v0 = np.minimum(np.floor(v).astype(np.intp), max(h - 2, 0))
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)
        fu = u - u0
        fv = v - v0
        out = (plane[v0, u0] * (1 - fu) * (1 - fv) + plane[v0, u1] * fu * (1 - fv)
               + plane[v1, u0] * (1 - fu) * fv + plane[v1, u1] * fu * fv)
        return np.where(inside, out, 0.0)

    def query(self, k: int, x, y):
        """Bilinear confidence of type ``k`` at image coordinates; 0 outside the raster."""
        out = self._bilinear(self.values[k], x, y)
        return float(out) if out.ndim == 0 else out

    def scale_at(self, k: int, x, y):
        out = self._bilinear(self.scales[k], x, y)
        return float(out) if out.ndim == 0 else out


def query(highres: HighResMap, k: int, x, y):
    return highres.query(k, x, y)


def raster_shape(pif: PifField, hr_stride: int) -> tuple[int, int]:
    ext_w, ext_h = pif.geometry.extent
    return math.ceil(ext_h / hr_stride) + 1, math.ceil(ext_w / hr_stride) + 1


def fuse(pif: PifField, config: FusionConfig = FusionConfig()) -> HighResMap:
    stride = pif.geometry.stride
    hr = config.hr_stride
    h, w = raster_shape(pif, hr)
    values = np.zeros((pif.n_types, h, w))
    weighted_scale = np.zeros_like(values)
    us = np.arange(w) * float(hr)
    vs = np.arange(h) * float(hr)

    for k in range(pif.n_types):
        plane = pif.data[k].astype(np.float64)
        # compare in the field's own float32 precision
        jj, ii = np.nonzero(pif.data[k, 0] > np.float32(config.cutoff))
        if len(ii) == 0:
            continue
        conf = plane[0, jj, ii] / config.normalization
        tx = (ii + plane[1, jj, ii]) * stride
        ty = (jj + plane[2, jj, ii]) * stride
        sig = plane[4, jj, ii] * stride
        reach = config.truncate * sig
        inv2s2 = (0.5 / (sig * sig))[:, None]
        # separable kernels, zeroed outside the truncation box; the sum of
        # outer products is then a single matrix product
        dx = us[None, :] - tx[:, None]
        dy = vs[None, :] - ty[:, None]
        ex = np.where(np.abs(dx) <= reach[:, None], np.exp(-dx * dx * inv2s2), 0.0)
        ey = np.where(np.abs(dy) <= reach[:, None], np.exp(-dy * dy * inv2s2), 0.0)
        values[k] = ey.T @ (ex * conf[:, None])
        weighted_scale[k] = ey.T @ (ex * (conf * sig)[:, None])

    with np.errstate(invalid="ignore", divide="ignore"):
        scales = np.where(values > 0, weighted_scale / values, 0.0)
    return HighResMap(values, scales, hr)
