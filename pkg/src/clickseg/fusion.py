"""Collaborative feedback fusion.

Two pathways run at feature resolution.  The feedback pathway refines the
corrected feedback globally with the help of the deep features.  The feature
pathway folds the refined feedback back into the features through a gated
residual: the gate stays closed in the first interaction round, when the
all-zero feedback carries no information, and opens from the second round on.

Tensors are batched: features (B, C, H', W'), feedback maps (B, 1, H', W').
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class FusionBlocks(nn.Module):
    """The three learnable blocks of the fusion stage.

    ``encode``   projects the features before they meet the feedback.
    ``update``   turns (encoded features ++ feedback) into a refreshed
                 probability map (sigmoid output).
    ``fuse``     turns (features ++ refreshed feedback) into a feature
                 correction added through the gated residual.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.encode = nn.Conv2d(channels, channels, 3, padding=1)
        self.update1 = nn.Conv2d(channels + 1, channels, 3, padding=1)
        self.update2 = nn.Conv2d(channels, 1, 3, padding=1)
        self.fuse1 = nn.Conv2d(channels + 1, channels, 3, padding=1)
        self.fuse2 = nn.Conv2d(channels, channels, 3, padding=1)

    def run_encode(self, features: torch.Tensor) -> torch.Tensor:
        return F.relu(self.encode(features))

    def run_update(self, encoded: torch.Tensor, corrected: torch.Tensor) -> torch.Tensor:
        x = torch.cat([encoded, corrected], dim=1)
        return torch.sigmoid(self.update2(F.relu(self.update1(x))))

    def run_fuse(self, features: torch.Tensor, updated: torch.Tensor) -> torch.Tensor:
        x = torch.cat([features, updated], dim=1)
        return self.fuse2(F.relu(self.fuse1(x)))


def gate_for_round(round_index: int, no_gate: bool = False) -> float:
    """Hard 0/1 gate schedule: closed on the first round, open afterwards."""
    if round_index < 1:
        raise ValueError(f"round index must be >= 1, got {round_index}")
    if no_gate:
        return 1.0
    return 0.0 if round_index == 1 else 1.0


def feedback_pathway(
    features: torch.Tensor, corrected: torch.Tensor, blocks: FusionBlocks
) -> torch.Tensor:
    """Globally update the corrected feedback using the deep features.

    Returns a (B, 1, H', W') map strictly in (0, 1).
    """
    if corrected.ndim != 4 or corrected.shape[1] != 1:
        raise ValueError(f"corrected feedback must be (B, 1, H, W), got {tuple(corrected.shape)}")
    if corrected.shape[-2:] != features.shape[-2:]:
        raise ValueError("features and feedback must share spatial shape")
    return blocks.run_update(blocks.run_encode(features), corrected)


def feature_pathway(
    features: torch.Tensor,
    updated: torch.Tensor,
    gate: float,
    blocks: FusionBlocks,
    residual: bool = True,
) -> torch.Tensor:
    """Fuse the updated feedback into the features via a gated residual.

    With the gate closed the pathway is the identity on the features
    (bit-exact) and the fuse block is skipped entirely, so no gradient reaches
    it.  ``residual=False`` drops the skip connection (ablation).
    """
    if gate not in (0.0, 1.0):
        raise ValueError(f"gate must be 0 or 1, got {gate}")
    if gate == 0.0:
        return features if residual else torch.zeros_like(features)
    delta = blocks.run_fuse(features, updated)
    return gate * delta + features if residual else gate * delta
