"""Focused feedback correction.

Corrects the previous-round feedback in a local window around the newest
click.  The affinity between every feature pixel and the clicked pixel's
feature vector decides how strongly the clicked label overrides the feedback:
high-affinity pixels are pulled toward the new label, low-affinity pixels keep
their feedback value.  Only the window around the click is touched; everything
outside is passed through untouched.

All functions here operate on torch tensors so the correction participates in
the training graph.  Features are (C, H', W'); feedback maps are (H', W').
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import torch

from .core import Click, box_bounds

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class Similarity:
    """Feature similarity measure: cosine (default) or exponential."""

    kind: str = "cosine"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cosine", "exponential"):
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def cosine(cls) -> "Similarity":
        return cls("cosine")

    @classmethod
    def exponential(cls, sigma: float = 1.0) -> "Similarity":
        return cls("exponential", sigma)


class _ZeroNormCounter:
    """Counts affinity entries hit by zero-norm feature vectors (cosine only).

    Zero-norm pixels get affinity 0 instead of raising; this counter is the
    signal that it happened.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    @property
    def count(self) -> int:
        return self._count

    def add(self, n: int) -> None:
        if n:
            with self._lock:
                self._count += n

    def reset(self) -> None:
        with self._lock:
            self._count = 0


zero_norm_events = _ZeroNormCounter()


def click_to_feature_coords(
    click: Click, image_h: int, image_w: int, feat_h: int, feat_w: int
) -> tuple[int, int]:
    """Map an image-space click to (row, col) on the feature grid, clamped in-bounds."""
    fy = int(round(click.y * feat_h / image_h))
    fx = int(round(click.x * feat_w / image_w))
    return min(max(fy, 0), feat_h - 1), min(max(fx, 0), feat_w - 1)


def feature_affinity(
    features: torch.Tensor,
    click_pos: tuple[int, int],
    measure: Similarity = Similarity.cosine(),
) -> torch.Tensor:
    """Per-pixel affinity between every feature vector and the clicked one.

    Cosine affinity is clamped to [0, 1]; with the network's non-negative
    features the clamp is a no-op, it just makes the range unconditional.
    Zero-norm vectors yield affinity 0 and bump ``zero_norm_events``.

    Exponential affinity is exp(-||f - f_click||^2 / sigma).
    """
    if features.ndim != 3:
        raise ValueError(f"features must be (C, H, W), got {tuple(features.shape)}")
    fy, fx = click_pos
    _, h, w = features.shape
    if not (0 <= fy < h and 0 <= fx < w):
        raise ValueError(f"click position {click_pos} outside {h}x{w} feature grid")
    anchor = features[:, fy, fx]
    if measure.kind == "exponential":
        d2 = ((features - anchor[:, None, None]) ** 2).sum(dim=0)
        return torch.exp(-d2 / measure.sigma)
    dots = (features * anchor[:, None, None]).sum(dim=0)
    norms = torch.linalg.vector_norm(features, dim=0)
    anchor_norm = torch.linalg.vector_norm(anchor)
    denom = (norms * anchor_norm).clamp_min(_NORM_FLOOR)
    affinity = (dots / denom).clamp(0.0, 1.0)
    dead = (norms == 0) | (anchor_norm == 0)
    if bool(dead.any()):
        zero_norm_events.add(int(dead.sum()))
        affinity = torch.where(dead, torch.zeros_like(affinity), affinity)
    return affinity


def blend_feedback(
    affinity: torch.Tensor, feedback: torch.Tensor, new_label: int
) -> torch.Tensor:
    """Convex blend of the clicked label into the feedback, weighted by affinity."""
    if affinity.shape != feedback.shape:
        raise ValueError("affinity and feedback shapes must match")
    return new_label * affinity + (1.0 - affinity) * feedback


def focused_correction(
    features: torch.Tensor,
    feedback: torch.Tensor,
    new_click: Click | None,
    click_pos: tuple[int, int] | None,
    ratio: float,
    measure: Similarity = Similarity.cosine(),
) -> torch.Tensor:
    """Correct ``feedback`` inside a box centered on the newest click.

    The blend runs over the full frame and a box mask keeps only the window
    around the click, so pixels outside the box are bit-identical to the input
    and gradients flow through the whole expression.  ``click_pos`` is the
    click mapped to feature coordinates.  With no new click the feedback is
    returned unchanged.
    """
    if new_click is None or click_pos is None:
        return feedback
    _, h, w = features.shape
    affinity = feature_affinity(features, click_pos, measure)
    blended = blend_feedback(affinity, feedback, new_click.label)
    box = torch.zeros_like(feedback)
    y0, y1, x0, x1 = box_bounds(click_pos[0], click_pos[1], ratio, h, w)
    box[y0:y1, x0:x1] = 1.0
    return box * blended + (1.0 - box) * feedback


def focused_correction_cropped(
    features: torch.Tensor,
    feedback: torch.Tensor,
    new_click: Click | None,
    click_pos: tuple[int, int] | None,
    ratio: float,
    measure: Similarity = Similarity.cosine(),
) -> torch.Tensor:
    """Crop/refine/paste variant of :func:`focused_correction`.

    Slices the window out, blends only there, and pastes the result back.
    Mathematically the same map; kept as the non-differentiable reference the
    box-mask formulation is tested against.
    """
    if new_click is None or click_pos is None:
        return feedback
    _, h, w = features.shape
    y0, y1, x0, x1 = box_bounds(click_pos[0], click_pos[1], ratio, h, w)
    out = feedback.clone()
    if y1 <= y0 or x1 <= x0:
        return out
    crop_feat = features[:, y0:y1, x0:x1]
    crop_fb = feedback[y0:y1, x0:x1]
    local_pos = (click_pos[0] - y0, click_pos[1] - x0)
    affinity = feature_affinity(crop_feat, local_pos, measure)
    out[y0:y1, x0:x1] = blend_feedback(affinity, crop_fb, new_click.label)
    return out
