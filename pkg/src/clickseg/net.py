"""Toy fully convolutional segmentation network.

A deliberately small backbone/head pair that trains on CPU in minutes while
exposing the same structural contract as a production segmenter: the backbone
maps the (image ++ interaction map) stack to a stride-4 feature tensor, and
the head recovers full resolution with a sigmoid.  The feedback correction and
fusion stages plug in between the two.

Backbone: stem conv -> two stride-2 downsampling convs -> two residual blocks,
all 3x3 kernels, ReLU activations.  The final activation is ReLU so features
are non-negative and cosine affinities land in [0, 1].

Head: two 3x3 conv blocks -> bilinear x4 upsample -> 1x1 conv -> sigmoid.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import DEFAULT_CLICK_RADIUS

STRIDE = 4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture + integration settings baked into a checkpoint.

    Any field that changes parameter shapes or the forward dataflow lives
    here so checkpoints can refuse to load into a mismatched configuration.
    """

    channels: int = 32
    stem_channels: int = 16
    click_radius: int = DEFAULT_CLICK_RADIUS
    expansion_ratio: float = 0.3
    similarity: str = "cosine"  # "cosine" | "exponential"
    sigma: float = 1.0
    gamma: float = 2.0
    # ablation flags
    no_feedback: bool = False
    use_correction: bool = True
    use_fusion: bool = True
    concat_input: bool = False
    no_residual: bool = False
    no_gate: bool = False

    def __post_init__(self):
        if self.similarity not in ("cosine", "exponential"):
            raise ValueError(f"unknown similarity measure {self.similarity!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not (0 < self.expansion_ratio <= 1):
            raise ValueError("expansion_ratio must be in (0, 1]")
        if self.concat_input and (self.use_correction or self.use_fusion):
            raise ValueError("concat_input bypasses correction/fusion; disable both")

    @property
    def feedback_enabled(self) -> bool:
        return not self.no_feedback

    @property
    def correction_enabled(self) -> bool:
        return self.feedback_enabled and not self.concat_input and self.use_correction

    @property
    def fusion_enabled(self) -> bool:
        return self.feedback_enabled and not self.concat_input and self.use_fusion

    @property
    def input_channels(self) -> int:
        # image (3) + interaction map (2) [+ feedback channel for concat_input]
        return 5 + (1 if self.feedback_enabled and self.concat_input else 0)

    @property
    def head_in_channels(self) -> int:
        # correction without fusion appends the corrected feedback to the features
        if self.correction_enabled and not self.fusion_enabled:
            return self.channels + 1
        return self.channels

    def arch_dict(self) -> dict:
        return asdict(self)

    def arch_hash(self) -> str:
        blob = json.dumps(self.arch_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        out = self.conv2(F.relu(self.conv1(x)))
        return F.relu(out + x)


class Backbone(nn.Module):
    """(B, in_ch, H, W) -> non-negative features at stride 4."""

    def __init__(self, in_channels: int, stem_channels: int, channels: int):
        super().__init__()
        self.stem = nn.Conv2d(in_channels, stem_channels, 3, padding=1)
        self.down1 = nn.Conv2d(stem_channels, channels, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        self.res1 = ResidualBlock(channels)
        self.res2 = ResidualBlock(channels)

    def forward(self, x):
        x = F.relu(self.stem(x))
        x = F.relu(self.down1(x))
        x = F.relu(self.down2(x))
        x = self.res1(x)
        return self.res2(x)


class Head(nn.Module):
    """Stride-4 features -> (B, 1, H, W) probabilities strictly in (0, 1)."""

    def __init__(self, in_channels: int, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.classifier = nn.Conv2d(channels, 1, 1)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        x = F.interpolate(x, scale_factor=STRIDE, mode="bilinear", align_corners=False)
        return torch.sigmoid(self.classifier(x))


def pad_to_stride(x: torch.Tensor, stride: int = STRIDE) -> tuple[torch.Tensor, tuple[int, int]]:
    """Zero-pad bottom/right so H and W divide ``stride``; returns (padded, (ph, pw))."""
    h, w = x.shape[-2:]
    ph = (-h) % stride
    pw = (-w) % stride
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph))
    return x, (ph, pw)


def backbone_forward(
    backbone: Backbone, image: torch.Tensor, click_map: torch.Tensor
) -> torch.Tensor:
    """Run the backbone on an image/interaction-map stack.

    ``image`` is (B, 3, H, W) or (B, >3, H, W) when extra input channels are
    in use; ``click_map`` is (B, 2, H, W).  Inputs not divisible by the stride
    are padded internally; features come back at padded-size / stride.
    """
    if image.shape[-2:] != click_map.shape[-2:]:
        raise ValueError("image and interaction map must share H x W")
    x = torch.cat([image, click_map], dim=1)
    x, _ = pad_to_stride(x)
    return backbone(x)


def make_seeded_model(config: ModelConfig, seed: int) -> "SegmentationModel":
    torch.manual_seed(seed)
    return SegmentationModel(config)


class SegmentationModel(nn.Module):
    """Backbone + head + fusion blocks under one parameter namespace."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        from .fusion import FusionBlocks  # avoid import cycle at module load

        self.config = config
        self.backbone = Backbone(config.input_channels, config.stem_channels, config.channels)
        self.head = Head(config.head_in_channels, config.channels)
        self.fusion = FusionBlocks(config.channels) if config.fusion_enabled else None

    def backbone_parameters(self):
        return self.backbone.parameters()

    def non_backbone_parameters(self):
        params = list(self.head.parameters())
        if self.fusion is not None:
            params += list(self.fusion.parameters())
        return params
