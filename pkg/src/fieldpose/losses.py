"""Field losses as value-and-gradient functions.

Every elementwise loss is vectorized over numpy arrays and returns its
analytic gradient next to the value; there is no autodiff graph. The
gradients exist for finite-difference verification and for callers that
want to plug these losses into their own training loop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .fields import B_MIN, PafField, PifField

BCE_EPS = 1e-7


class RegressionKind(str, enum.Enum):
    VANILLA_L1 = "vanilla_l1"
    SMOOTH_L1 = "smooth_l1"
    LAPLACE = "laplace"


@dataclass(frozen=True)
class LossConfig:
    regression_kind: RegressionKind = RegressionKind.LAPLACE
    k_smooth: float = 0.5
    w_confidence: float = 1.0
    w_regression: float = 1.0
    w_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "regression_kind", RegressionKind(self.regression_kind))
        if self.regression_kind is RegressionKind.SMOOTH_L1 and not self.k_smooth > 0:
            raise ValueError("k_smooth must be positive for smooth_l1")
        if min(self.w_confidence, self.w_regression, self.w_scale) < 0:
            raise ValueError("loss weights must be non-negative")


def laplace_loss(x, mu, b, b_min: float = B_MIN):
    """Laplace negative log-likelihood |x - mu| / b + log(2b).

    Returns ``(value, d/dx, d/db, clamped)``; spreads below ``b_min`` are
    raised to it and reported in the boolean ``clamped`` mask (the b
    gradient is zero there).
    """
    x, mu, b = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (x, mu, b)))
    clamped = b < b_min
    bc = np.maximum(b, b_min)
    d = x - mu
    ad = np.abs(d)
    value = ad / bc + np.log(2.0 * bc)
    dx = np.sign(d) / bc
    db = np.where(clamped, 0.0, -ad / bc ** 2 + 1.0 / bc)
    return value, dx, db, clamped


def laplace_loss_log(x, mu, beta):
    """Laplace loss parameterized by beta = log b; returns ``(value, d/dx, d/dbeta)``.

    This is the internal form: any real beta gives a valid spread, so no
    clamping is needed.
    """
    x, mu, beta = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (x, mu, beta)))
    inv_b = np.exp(-beta)
    d = x - mu
    ad = np.abs(d)
    value = ad * inv_b + np.log(2.0) + beta
    return value, np.sign(d) * inv_b, 1.0 - ad * inv_b


def smooth_l1_loss(x, mu, r_smooth):
    """Huber-style L1: d^2 / (2r) inside radius r, |d| - r/2 outside."""
    r = np.asarray(r_smooth, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("r_smooth must be positive")
    d = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    ad = np.abs(d)
    inner = ad < r
    value = np.where(inner, d * d / (2.0 * r), ad - 0.5 * r)
    grad = np.where(inner, d / r, np.sign(d))
    return value, grad


def l1_loss(x, mu):
    d = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    return np.abs(d), np.sign(d)


def smooth_l1_radius(area, sigma_k, k_smooth):
    """Radius ``k_smooth * sqrt(area) * sigma_k`` (px when area is px^2)."""
    area = np.asarray(area, dtype=np.float64)
    if np.any(area <= 0):
        raise ValueError("area must be positive")
    if not k_smooth > 0:
        raise ValueError("k_smooth must be positive")
    out = k_smooth * np.sqrt(area) * np.asarray(sigma_k, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


def bce_confidence(pred, target, eps: float = BCE_EPS):
    """Binary cross entropy on clamped predictions; returns ``(value, d/dpred)``."""
    p = np.clip(np.asarray(pred, dtype=np.float64), eps, 1.0 - eps)
    t = np.asarray(target, dtype=np.float64)
    value = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    grad = (p - t) / (p * (1.0 - p))
    return value, grad


# -- composite -------------------------------------------------------------


def _regression(config: LossConfig, x, mu, b, radius):
    kind = config.regression_kind
    if kind is RegressionKind.LAPLACE:
        value, _, _, clamped = laplace_loss(x, mu, b)
        return value, int(clamped.sum())
    if kind is RegressionKind.SMOOTH_L1:
        return smooth_l1_loss(x, mu, radius)[0], 0
    return l1_loss(x, mu)[0], 0


def _paf_radius(paf_t: PafField, pif_t: PifField, skeleton_connections, k_smooth: float):
    """Smooth-L1 radius per PAF cell and endpoint, in cells.

    Each endpoint borrows the PIF target scale of its keypoint type at the
    cell nearest to where the endpoint lands; where that cell is not a PIF
    foreground cell the radius falls back to ``k_smooth`` cells.
    """
    g = paf_t.geometry
    n = paf_t.n_types
    radius = np.full((n, 2, g.grid_h, g.grid_w), float(k_smooth))
    jj, ii = np.mgrid[0:g.grid_h, 0:g.grid_w]
    for ci, pair in enumerate(skeleton_connections):
        mask = paf_t.data[ci, 0] == 1
        if not mask.any():
            continue
        for e, (cx, cy) in enumerate(((1, 2), (4, 5))):
            tx = np.clip(np.rint(ii + paf_t.data[ci, cx]), 0, g.grid_w - 1).astype(np.intp)
            ty = np.clip(np.rint(jj + paf_t.data[ci, cy]), 0, g.grid_h - 1).astype(np.intp)
            ex = ii + paf_t.data[ci, cx]
            ey = jj + paf_t.data[ci, cy]
            # vector 1 aims at the nearer endpoint, so either type may sit there
            for k in pair:
                plane = pif_t.data[k]
                hit = mask & (plane[0, ty, tx] == 1)
                land_x = tx + plane[1, ty, tx]
                land_y = ty + plane[2, ty, tx]
                close = hit & (np.hypot(land_x - ex, land_y - ey) < 0.5)
                radius[ci, e] = np.where(close, k_smooth * plane[4, ty, tx] / 2.0, radius[ci, e])
    return radius


def composite_loss(pred: tuple[PifField, PafField], target: tuple[PifField, PafField],
                   config: LossConfig = LossConfig(), connections=None) -> tuple[float, dict]:
    """Weighted field loss and its per-component breakdown.

    Confidences get BCE at every cell. Vector components get the configured
    regression loss, and PIF scales vanilla L1, only where the target
    confidence is 1. Laplace spreads come from the prediction's b channels.
    Smooth-L1 radii follow ``k_smooth * sqrt(A) * sigma_k``; since target
    scale = kappa_k sqrt(A) / stride with kappa_k = 2 sigma_k, that is
    ``k_smooth * target_scale / 2`` cells. ``connections`` (needed only for
    smooth_l1 on the PAF) lists the keypoint pair of every PAF type.
    """
    pif_p, paf_p = pred
    pif_t, paf_t = target
    for a, b in ((pif_p, pif_t), (paf_p, paf_t)):
        if a.geometry != b.geometry or a.data.shape != b.data.shape:
            raise ValueError(f"geometry mismatch: {a.geometry} {a.data.shape} vs {b.geometry} {b.data.shape}")
    if pif_p.geometry != paf_p.geometry:
        raise ValueError("PIF and PAF geometries differ")

    P = pif_p.data.astype(np.float64)
    T = pif_t.data.astype(np.float64)
    Q = paf_p.data.astype(np.float64)
    U = paf_t.data.astype(np.float64)
    fg_pif = T[:, 0] == 1
    fg_paf = U[:, 0] == 1

    out = {
        "pif_confidence": float(bce_confidence(P[:, 0], T[:, 0])[0].sum()),
        "paf_confidence": float(bce_confidence(Q[:, 0], U[:, 0])[0].sum()),
    }
    clamped = 0

    pif_radius = config.k_smooth * T[:, 4] / 2.0
    value = 0.0
    for c in (1, 2):
        v, n = _regression(config, P[:, c][fg_pif], T[:, c][fg_pif], P[:, 3][fg_pif], pif_radius[fg_pif])
        value += float(v.sum())
        clamped += n
    out["pif_regression"] = value
    out["pif_scale"] = float(l1_loss(P[:, 4][fg_pif], T[:, 4][fg_pif])[0].sum())

    if config.regression_kind is RegressionKind.SMOOTH_L1:
        if connections is None:
            raise ValueError("smooth_l1 on PAF fields needs the skeleton connections")
        paf_radius = _paf_radius(paf_t, pif_t, connections, config.k_smooth)
    else:
        paf_radius = np.ones((paf_t.n_types, 2) + U.shape[2:])
    value = 0.0
    for e, (cx, cy, cb) in enumerate(((1, 2, 3), (4, 5, 6))):
        r = paf_radius[:, e][fg_paf]
        for c in (cx, cy):
            v, n = _regression(config, Q[:, c][fg_paf], U[:, c][fg_paf], Q[:, cb][fg_paf], r)
            value += float(v.sum())
            clamped += n
    out["paf_regression"] = value

    total = (config.w_confidence * (out["pif_confidence"] + out["paf_confidence"])
             + config.w_regression * (out["pif_regression"] + out["paf_regression"])
             + config.w_scale * out["pif_scale"])
    out["clamped_b"] = clamped
    return float(total), out
