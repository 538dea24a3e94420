"""Simulated user: where would the next click land?

At evaluation time the simulated user always clicks the misclassified pixel
farthest from its error region's boundary (ties broken by smallest row, then
smallest column).  At training time clicks are instead sampled uniformly from
the eroded mislabelled regions, which exposes the model to less-ideal click
placement.

Conventions, pinned for determinism:
  * error components use 4-connectivity
  * pixels outside the image frame count as region complement, so the
    boundary distance is finite even for a full-frame error
  * erosion uses a 3x3 square structuring element, one iteration
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import Click, ClickSet

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class ErrorRegion:
    """Misclassified pixels with component labels and boundary distances."""

    mask: np.ndarray  # (H, W) bool, True where prediction != ground truth
    labels: np.ndarray  # (H, W) int, 0 outside, 1..n per 4-connected component
    n_components: int
    eta: np.ndarray  # (H, W) float64, Euclidean distance to component complement

    @property
    def empty(self) -> bool:
        return not self.mask.any()


def _boundary_distance(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest non-mask pixel, frame border included.

    For a pixel inside a 4-connected component the nearest complement pixel is
    never part of another component (two error pixels that are 4-adjacent
    would be the same component), so one transform over the union of all
    components equals the per-component distances.
    """
    padded = np.pad(mask, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def build_error_region(
    pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5
) -> ErrorRegion:
    """Symmetric difference of the thresholded prediction and the ground truth."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    mask = (np.asarray(pred) >= threshold) != (np.asarray(gt) > 0.5)
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    eta = _boundary_distance(mask)
    return ErrorRegion(mask=mask, labels=labels, n_components=int(n), eta=eta)


def select_next_click(
    region: ErrorRegion,
    gt: np.ndarray,
    round_index: int = 0,
    exclude: set[tuple[int, int]] | None = None,
) -> Click | None:
    """Pick the error pixel farthest from its region boundary.

    Returns None when the region is empty (converged, nothing left to fix).
    The click label is the ground-truth value at the chosen pixel, so it
    always disagrees with the current prediction there.  Ties resolve to the
    smallest row, then smallest column.

    ``exclude`` drops candidate pixels (already-clicked positions) without
    changing the distance field, so a stubbornly misclassified pixel is never
    clicked twice.
    """
    candidates = region.mask
    if exclude:
        candidates = candidates.copy()
        for x, y in exclude:
            if 0 <= y < candidates.shape[0] and 0 <= x < candidates.shape[1]:
                candidates[y, x] = False
    if not candidates.any():
        return None
    eta = np.where(candidates, region.eta, -1.0)
    flat = int(np.argmax(eta))  # first maximum in row-major order
    y, x = np.unravel_index(flat, eta.shape)
    label = int(np.asarray(gt)[y, x] > 0.5)
    return Click(x=int(x), y=int(y), label=label, round=round_index)


def erode_region(mask: np.ndarray) -> np.ndarray:
    """One erosion step with a 3x3 square element; frame border erodes away."""
    return ndimage.binary_erosion(mask, structure=np.ones((3, 3), dtype=bool))


def sample_training_clicks(
    pred: np.ndarray,
    gt: np.ndarray,
    existing: ClickSet,
    max_new: int,
    rng: np.random.Generator,
    threshold: float = 0.5,
    round_index: int = 0,
) -> ClickSet:
    """Extend ``existing`` with up to ``max_new`` clicks from the eroded error region.

    Candidates are drawn uniformly without replacement, never on an occupied
    pixel, and labeled by the ground truth.  Falls back to the un-eroded
    region when erosion removes everything; returns ``existing`` unchanged
    when there are no candidates at all.
    """
    if max_new < 0:
        raise ValueError(f"max_new must be >= 0, got {max_new}")
    if max_new == 0:
        return existing
    region = build_error_region(pred, gt, threshold)
    if region.empty:
        return existing
    taken = {(c.x, c.y) for c in existing}

    def candidates(mask: np.ndarray) -> np.ndarray:
        ys, xs = np.nonzero(mask)
        keep = [(x, y) not in taken for y, x in zip(ys, xs)]
        return np.stack([ys[keep], xs[keep]], axis=1) if any(keep) else np.empty((0, 2), int)

    pool = candidates(erode_region(region.mask))
    if len(pool) == 0:
        pool = candidates(region.mask)
    if len(pool) == 0:
        return existing
    k = min(max_new, len(pool))
    picks = rng.choice(len(pool), size=k, replace=False)
    clicks = existing
    gt_arr = np.asarray(gt)
    for idx in picks:
        y, x = (int(v) for v in pool[idx])
        label = int(gt_arr[y, x] > 0.5)
        clicks = clicks.add(Click(x=x, y=y, label=label, round=round_index))
    return clicks
