"""Normalized focal loss and the three-term training objective.

The focal weight of each pixel is (1 - p_t)^gamma where p_t is the predicted
probability of the true class.  The per-image sum of focal weights is used to
rescale the loss; that normalizer is treated as a constant during
differentiation (gradients do not flow through it), so the loss keeps a stable
magnitude as predictions improve without distorting gradient directions.
"""
from __future__ import annotations

import torch

EPS = 1e-7


def _true_class_prob(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    p = pred.clamp(EPS, 1.0 - EPS)
    return torch.where(gt.to(p.dtype) > 0.5, p, 1.0 - p)


def focal_weights(
    pred: torch.Tensor,
    gt: torch.Tensor,
    gamma: float,
    weight_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Per-pixel focal weights m * (1 - p_t)^gamma."""
    focal = (1.0 - _true_class_prob(pred, gt)) ** gamma
    if weight_mask is not None:
        if weight_mask.shape != pred.shape:
            raise ValueError(
                f"weight_mask shape {tuple(weight_mask.shape)} does not match pred"
            )
        focal = focal * weight_mask.to(focal.dtype)
    return focal


def focal_normalizer(
    pred: torch.Tensor,
    gt: torch.Tensor,
    gamma: float,
    weight_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """The normalizer the loss divides by: sum of focal weights, detached."""
    return focal_weights(pred, gt, gamma, weight_mask).sum().detach()


def normalized_focal_loss(
    pred: torch.Tensor,
    gt: torch.Tensor,
    gamma: float = 2.0,
    weight_mask: torch.Tensor | None = None,
    normalizer: torch.Tensor | float | None = None,
) -> torch.Tensor:
    """Normalized focal loss over one probability map.

    Args:
        pred: probability map, any shape, values in (0, 1); clipped to
            [EPS, 1 - EPS] for numerical safety.
        gt: binary map of the same shape.
        gamma: focusing exponent, >= 0.  gamma=0 reduces to mean
            binary cross-entropy over the masked pixels.
        weight_mask: optional binary map restricting the pixel sum.
        normalizer: override for the focal-weight sum.  Gradient verification
            holds it fixed at the unperturbed point, since differentiation
            treats it as a constant.

    Returns a non-negative scalar tensor.  When the normalizer is
    zero the loss is defined as 0.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    p_t = _true_class_prob(pred, gt)
    focal = focal_weights(pred, gt, gamma, weight_mask)
    if normalizer is None:
        normalizer = focal.sum().detach()
    z = float(normalizer)
    if z == 0.0:
        return pred.sum() * 0.0
    return -(focal * torch.log(p_t)).sum() / z


def full_loss(
    corrected: torch.Tensor,
    updated: torch.Tensor,
    prediction: torch.Tensor,
    gt: torch.Tensor,
    crop_mask: torch.Tensor,
    gamma: float = 2.0,
) -> torch.Tensor:
    """Sum of the three supervision terms of one training round.

    ``corrected`` (the locally corrected feedback) is supervised only inside
    ``crop_mask``; the globally updated feedback and the final prediction are
    supervised everywhere.  All maps must already be aligned to ground-truth
    resolution.
    """
    return (
        normalized_focal_loss(corrected, gt, gamma, weight_mask=crop_mask)
        + normalized_focal_loss(updated, gt, gamma)
        + normalized_focal_loss(prediction, gt, gamma)
    )
