"""Forward-pass composition and the interactive session state machine.

One interaction round runs: encode clicks -> backbone -> focused feedback
correction -> feedback/feature fusion pathways (gated by round) -> head.
`run_round` is the batched core used by training; `forward_interactive` wraps
a single sample; `InteractiveSession` owns the click/feedback/round state of
one live annotation and guarantees replays are bit-exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .core import (
    Click,
    ClickSet,
    Sample,
    ValidationError,
    box_bounds,
    encode_clicks,
    zero_feedback,
)
from .correction import Similarity, click_to_feature_coords, focused_correction
from .fusion import feature_pathway, feedback_pathway, gate_for_round
from .net import STRIDE, SegmentationModel, pad_to_stride


@dataclass
class RoundOutput:
    """Everything produced by one interaction round (batched tensors)."""

    prediction: torch.Tensor  # (B, H, W) probabilities, cropped to input size
    corrected: torch.Tensor | None  # (B, hf, wf) locally corrected feedback
    updated: torch.Tensor | None  # (B, hf, wf) globally updated feedback
    crop_mask: torch.Tensor | None  # (B, hf, wf) correction window, 0/1
    gate: float
    feature_shape: tuple[int, int]
    padded_shape: tuple[int, int]


def _to_tensor(arr: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)


def run_round(
    model: SegmentationModel,
    images: torch.Tensor,
    click_maps: torch.Tensor,
    feedbacks: torch.Tensor,
    new_clicks: list[Click | None],
    round_index: int,
) -> RoundOutput:
    """Run one interaction round on a batch.

    Args:
        images: (B, 3, H, W) in [0, 1].
        click_maps: (B, 2, H, W) disk-encoded clicks.
        feedbacks: (B, 1, H, W) previous-round probabilities (zeros in round 1).
        new_clicks: newest click per sample (image coordinates); None entries
            skip the correction for that sample.
        round_index: 1-based interaction round, drives the fusion gate.
    """
    cfg = model.config
    b, _, h, w = images.shape
    stack = [images, click_maps]
    if cfg.feedback_enabled and cfg.concat_input:
        stack.append(feedbacks)
    x = torch.cat(stack, dim=1)
    x, _ = pad_to_stride(x)
    hp, wp = x.shape[-2:]
    features = model.backbone(x)
    hf, wf = features.shape[-2:]

    corrected = None
    updated = None
    crop_mask = None
    gate = gate_for_round(round_index, cfg.no_gate)
    head_in = features

    if cfg.feedback_enabled and not cfg.concat_input:
        fb = F.pad(feedbacks, (0, wp - w, 0, hp - h))
        fb_small = F.interpolate(fb, size=(hf, wf), mode="bilinear", align_corners=False)
        sim = Similarity(cfg.similarity, cfg.sigma)
        per_sample = []
        boxes = torch.zeros((b, hf, wf), dtype=features.dtype)
        for i in range(b):
            click = new_clicks[i]
            if cfg.use_correction and click is not None:
                pos = click_to_feature_coords(click, hp, wp, hf, wf)
                per_sample.append(
                    focused_correction(
                        features[i], fb_small[i, 0], click, pos, cfg.expansion_ratio, sim
                    )
                )
                y0, y1, x0, x1 = box_bounds(pos[0], pos[1], cfg.expansion_ratio, hf, wf)
                boxes[i, y0:y1, x0:x1] = 1.0
            else:
                per_sample.append(fb_small[i, 0])
        corrected = torch.stack(per_sample, dim=0)
        crop_mask = boxes
        if cfg.fusion_enabled:
            upd = feedback_pathway(features, corrected[:, None], model.fusion)
            fused = feature_pathway(
                features, upd, gate, model.fusion, residual=not cfg.no_residual
            )
            updated = upd[:, 0]
            head_in = fused
        elif cfg.correction_enabled:
            head_in = torch.cat([features, corrected[:, None]], dim=1)

    pred = model.head(head_in)[:, 0, :h, :w]
    return RoundOutput(
        prediction=pred,
        corrected=corrected,
        updated=updated,
        crop_mask=crop_mask,
        gate=gate,
        feature_shape=(hf, wf),
        padded_shape=(hp, wp),
    )


def forward_interactive(
    model: SegmentationModel,
    image: np.ndarray,
    clicks: ClickSet,
    feedback: np.ndarray,
    round_index: int,
) -> RoundOutput:
    """Single-sample convenience wrapper around :func:`run_round`."""
    h, w = image.shape[:2]
    smap = encode_clicks(clicks, h, w, model.config.click_radius)
    images = _to_tensor(image).permute(2, 0, 1)[None]
    maps = _to_tensor(smap).permute(2, 0, 1)[None]
    fb = _to_tensor(feedback)[None, None]
    return run_round(model, images, maps, fb, [clicks.newest], round_index)


@dataclass
class SessionState:
    """Click/feedback/round bookkeeping for one annotation session."""

    clicks: ClickSet = field(default_factory=ClickSet)
    round: int = 0
    history: list[np.ndarray] = field(default_factory=list)  # prediction after each round

    @property
    def feedback(self) -> np.ndarray | None:
        return self.history[-1] if self.history else None


class InteractiveSession:
    """Owns one image's interactive loop: add clicks, get masks, undo.

    The same click sequence replayed through a fresh session on the same
    model reproduces every mask bit-exactly; that property is what ties the
    HTTP service (and any recorded session log) back to the engine.
    """

    def __init__(self, model: SegmentationModel, sample: Sample):
        self.model = model
        self.sample = sample
        self.state = SessionState()
        model.eval()

    @classmethod
    def from_image(cls, model: SegmentationModel, image: np.ndarray, id: str = "") -> "InteractiveSession":
        dummy_gt = np.zeros(image.shape[:2], dtype=np.uint8)
        return cls(model, Sample(image=image, gt_mask=dummy_gt, id=id))

    @property
    def round(self) -> int:
        return self.state.round

    @property
    def height(self) -> int:
        return self.sample.height

    @property
    def width(self) -> int:
        return self.sample.width

    @property
    def last_gate(self) -> float | None:
        """Gate value used by the round that produced the current mask."""
        if self.state.round == 0:
            return None
        return gate_for_round(self.state.round, self.model.config.no_gate)

    def reset(self) -> None:
        self.state = SessionState()

    def current_mask(self) -> np.ndarray:
        fb = self.state.feedback
        if fb is None:
            return zero_feedback(self.height, self.width)
        return fb

    def add_click(self, click: Click) -> np.ndarray:
        """Append a click, run one round, return the new probability mask."""
        if not (0 <= click.x < self.width and 0 <= click.y < self.height):
            raise ValidationError(
                f"click ({click.x}, {click.y}) outside {self.height}x{self.width} image"
            )
        new_round = self.state.round + 1
        click = Click(x=click.x, y=click.y, label=click.label, round=new_round)
        clicks = self.state.clicks.add(click)  # raises on duplicate pixel
        feedback = self.current_mask()
        with torch.no_grad():
            out = forward_interactive(
                self.model, self.sample.image, clicks, feedback, new_round
            )
        pred = out.prediction[0].numpy().astype(np.float32)
        self.state.clicks = clicks
        self.state.round = new_round
        self.state.history.append(pred)
        return pred

    def undo(self) -> np.ndarray:
        """Pop the last click, restore the previous mask from history."""
        if self.state.round == 0:
            raise ValidationError("nothing to undo")
        self.state.clicks = self.state.clicks.without_last()
        self.state.round -= 1
        self.state.history.pop()
        return self.current_mask()


def replay_clicks(
    model: SegmentationModel, sample: Sample, clicks: list[Click]
) -> list[np.ndarray]:
    """Replay a recorded click list through a fresh session; returns all masks."""
    session = InteractiveSession(model, sample)
    return [session.add_click(c) for c in clicks]
