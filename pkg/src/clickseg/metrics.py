"""Mask quality metrics: IoU, boundary IoU, and average symmetric surface distance.

Boundary convention shared by all three: a boundary pixel is a mask pixel
4-adjacent to the complement, with pixels outside the frame counted as
complement (a mask touching the frame edge has boundary there).
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .clicking import FOUR_CONNECTED


def _as_bool(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask) > 0.5


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; defined as 1.0 when both masks are empty."""
    p, g = _as_bool(pred), _as_bool(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Mask pixels 4-adjacent to the complement (frame border included)."""
    m = _as_bool(mask)
    eroded = ndimage.binary_erosion(m, structure=FOUR_CONNECTED, border_value=0)
    return m & ~eroded


def boundary_iou(pred: np.ndarray, gt: np.ndarray, band_px: int = 2) -> float:
    """IoU restricted to a band of ``band_px`` around either mask's boundary.

    The band is every pixel within Euclidean distance ``band_px`` of the union
    of the two boundary sets.  An empty band (both masks boundary-free) gives
    1.0.
    """
    if band_px < 1:
        raise ValueError(f"band_px must be >= 1, got {band_px}")
    p, g = _as_bool(pred), _as_bool(gt)
    boundary = boundary_pixels(p) | boundary_pixels(g)
    if not boundary.any():
        return 1.0
    band = ndimage.distance_transform_edt(~boundary) <= band_px
    union = (p | g) & band
    if not union.any():
        return 1.0
    return float(((p & g) & band).sum() / union.sum())


def assd(pred: np.ndarray, gt: np.ndarray) -> float | None:
    """Average symmetric surface distance between the two boundaries, in pixels.

    Mean over both boundary sets of each boundary pixel's Euclidean distance
    to the other boundary set.  Undefined (None) when either mask is empty.
    """
    p, g = _as_bool(pred), _as_bool(gt)
    if not p.any() or not g.any():
        return None
    bp, bg = boundary_pixels(p), boundary_pixels(g)
    dist_to_bg = ndimage.distance_transform_edt(~bg)
    dist_to_bp = ndimage.distance_transform_edt(~bp)
    total = dist_to_bg[bp].sum() + dist_to_bp[bg].sum()
    return float(total / (bp.sum() + bg.sum()))
