"""Training loop with iterative simulated-interaction click sampling.

Each batch simulates k interaction rounds (k uniform in a configured range).
Round 1 starts from all-zero feedback and one deterministic click inside the
object; later rounds run without gradient tracking, sample fresh clicks from
the eroded error regions of the last prediction, and feed the prediction back
in.  Only the final round's forward pass is trained (configurable), with the
three-term objective: corrected feedback inside its window, updated feedback,
and the final mask.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .clicking import build_error_region, sample_training_clicks, select_next_click
from .core import ClickSet, Sample, encode_clicks
from .data import AugmentConfig, augment
from .engine import RoundOutput, run_round
from .loss import focal_normalizer, normalized_focal_loss
from .net import ModelConfig, SegmentationModel

ADAM_BETAS = (0.9, 0.999)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the model is rolled back to the last good epoch."""


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    base_lr: float = 5e-4  # backbone learning rate
    lr_ratio: float = 10.0  # non-backbone parts train this much faster
    decay_epoch: int = 16
    decay_factor: float = 0.1
    min_rounds: int = 1
    max_rounds: int = 4
    max_clicks_per_round: int = 3
    train_all_rounds: bool = False  # backprop through every simulated round
    augment: bool = True
    seed: int = 0
    threads: int = 1  # single-threaded mode guarantees determinism
    probe_every: int = 5  # epochs between held-out NoC probes (0 disables)
    probe_max_clicks: int = 10
    probe_target: float = 0.85

    def __post_init__(self):
        if self.base_lr <= 0 or self.lr_ratio <= 0 or self.decay_factor <= 0:
            raise ValueError("rates must be positive")
        if not (1 <= self.min_rounds <= self.max_rounds):
            raise ValueError("need 1 <= min_rounds <= max_rounds")
        if self.max_clicks_per_round < 1:
            raise ValueError("max_clicks_per_round must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    loss_total: float
    loss_corrected: float
    loss_updated: float
    loss_prediction: float
    lr: float
    probe_noc: float | None
    seconds: float


@dataclass
class TrainResult:
    model: SegmentationModel
    log: list[EpochStats] = field(default_factory=list)
    diverged: bool = False


def initial_click(sample: Sample) -> ClickSet:
    """Deterministic first click: farthest-inside point of the object."""
    empty = np.zeros_like(sample.gt_mask, dtype=np.float32)
    click = select_next_click(build_error_region(empty, sample.gt_mask), sample.gt_mask, 1)
    if click is None:  # blank ground truth: no sensible click exists
        return ClickSet()
    return ClickSet([click])


@dataclass
class RoundLosses:
    corrected: torch.Tensor
    updated: torch.Tensor
    prediction: torch.Tensor
    total: torch.Tensor
    normalizers: dict[str, float]

    def term(self, name: str) -> torch.Tensor:
        return getattr(self, name)


def round_losses(
    out: RoundOutput,
    gt: torch.Tensor,
    cfg: ModelConfig,
    frozen_normalizers: dict[str, float] | None = None,
) -> RoundLosses:
    """Supervision terms for one round, each aligned to ground-truth resolution.

    The corrected-feedback term only applies inside the correction window and
    only when the correction stage is active; the updated-feedback term only
    when the fusion stage is active.  Inactive terms are zero.

    ``frozen_normalizers`` substitutes previously captured focal-weight sums
    (finite-difference probes hold them fixed, matching the loss's
    constant-normalizer differentiation rule).
    """
    b, h, w = gt.shape
    hp, wp = out.padded_shape
    zero = out.prediction.sum() * 0.0
    frozen = frozen_normalizers or {}
    terms = {"corrected": zero, "updated": zero.clone()}
    normalizers: dict[str, float] = {}

    def to_full(m: torch.Tensor, mode: str) -> torch.Tensor:
        up = F.interpolate(
            m[:, None],
            size=(hp, wp),
            mode=mode,
            align_corners=False if mode == "bilinear" else None,
        )
        return up[:, 0, :h, :w]

    def nfl(name: str, pred: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        z = frozen.get(name)
        if z is None:
            z = float(focal_normalizer(pred, gt, cfg.gamma, mask))
        normalizers[name] = z
        return normalized_focal_loss(pred, gt, cfg.gamma, weight_mask=mask, normalizer=z)

    if cfg.correction_enabled and out.corrected is not None and out.crop_mask is not None:
        crop = to_full(out.crop_mask, "nearest")
        terms["corrected"] = nfl("corrected", to_full(out.corrected, "bilinear"), crop)
    if cfg.fusion_enabled and out.updated is not None:
        terms["updated"] = nfl("updated", to_full(out.updated, "bilinear"))
    terms["prediction"] = nfl("prediction", out.prediction)
    return RoundLosses(
        corrected=terms["corrected"],
        updated=terms["updated"],
        prediction=terms["prediction"],
        total=terms["corrected"] + terms["updated"] + terms["prediction"],
        normalizers=normalizers,
    )


def _batch_tensors(samples: list[Sample]):
    shapes = {s.gt_mask.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"batch samples must share one size, got {sorted(shapes)}")
    images = torch.stack([torch.from_numpy(s.image).permute(2, 0, 1) for s in samples])
    gts = torch.stack([torch.from_numpy(s.gt_mask.astype(np.float32)) for s in samples])
    h, w = samples[0].gt_mask.shape
    return images, gts, h, w


def _click_maps(clicksets: list[ClickSet], h: int, w: int, radius: int) -> torch.Tensor:
    return torch.stack(
        [
            torch.from_numpy(encode_clicks(cs, h, w, radius)).permute(2, 0, 1)
            for cs in clicksets
        ]
    )


def simulate_batch(
    model: SegmentationModel,
    samples: list[Sample],
    n_rounds: int,
    max_new: int,
    rng: np.random.Generator,
    train_all_rounds: bool = False,
) -> dict[str, torch.Tensor]:
    """Run ``n_rounds`` simulated interactions; return the trained round's losses."""
    cfg = model.config
    images, gts, h, w = _batch_tensors(samples)
    clicksets = [initial_click(s) for s in samples]
    feedbacks = torch.zeros((len(samples), 1, h, w))

    accumulated = None
    for round_index in range(1, n_rounds + 1):
        maps = _click_maps(clicksets, h, w, cfg.click_radius)
        newest = [cs.newest for cs in clicksets]
        final = round_index == n_rounds
        grad = final or train_all_rounds
        with torch.set_grad_enabled(grad):
            out = run_round(model, images, maps, feedbacks, newest, round_index)
        if grad:
            rl = round_losses(out, gts, cfg)
            terms = {
                "corrected": rl.corrected,
                "updated": rl.updated,
                "prediction": rl.prediction,
                "total": rl.total,
            }
            accumulated = (
                terms
                if accumulated is None
                else {k: accumulated[k] + terms[k] for k in terms}
            )
        if not final:
            preds = out.prediction.detach()
            feedbacks = preds[:, None]
            for i, s in enumerate(samples):
                n_new = int(rng.integers(1, max_new + 1))
                clicksets[i] = sample_training_clicks(
                    preds[i].numpy(),
                    s.gt_mask,
                    clicksets[i],
                    n_new,
                    rng,
                    round_index=round_index + 1,
                )
    return accumulated


def probe_noc(
    model: SegmentationModel,
    probe_set: list[Sample],
    max_clicks: int,
    target: float,
) -> float:
    """Mean clicks-to-target on a small held-out set (quick training probe)."""
    from .protocol import run_protocol

    report = run_protocol(
        model, probe_set, max_clicks=max_clicks, targets=(target,), metric_clicks=()
    )
    return report.noc_mean[target]


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset: list[Sample],
    probe_set: list[Sample] | None = None,
    log_hook=None,
) -> TrainResult:
    """Train a fresh model; deterministic for a fixed config in threads=1 mode."""
    if not dataset:
        raise ValueError("dataset must be non-empty")
    torch.set_num_threads(train_config.threads)
    torch.manual_seed(train_config.seed)
    rng = np.random.default_rng(train_config.seed)
    model = SegmentationModel(model_config)
    model.train()

    backbone_params = list(model.backbone_parameters())
    other_params = list(model.non_backbone_parameters())
    optimizer = torch.optim.Adam(
        [
            {"params": backbone_params, "lr": train_config.base_lr},
            {"params": other_params, "lr": train_config.base_lr * train_config.lr_ratio},
        ],
        betas=ADAM_BETAS,
    )

    aug_cfg = AugmentConfig(out_size=dataset[0].gt_mask.shape)
    result = TrainResult(model=model)
    last_good: dict | None = None

    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        if epoch == train_config.decay_epoch:
            for group in optimizer.param_groups:
                group["lr"] *= train_config.decay_factor
        order = rng.permutation(len(dataset))
        sums = {"total": 0.0, "corrected": 0.0, "updated": 0.0, "prediction": 0.0}
        n_batches = 0
        for start in range(0, len(order), train_config.batch_size):
            idx = order[start : start + train_config.batch_size]
            batch = [dataset[i] for i in idx]
            if train_config.augment:
                batch = [augment(s, rng, aug_cfg) for s in batch]
            batch = [s for s in batch if s.gt_mask.any()]
            if not batch:
                continue
            k = int(rng.integers(train_config.min_rounds, train_config.max_rounds + 1))
            terms = simulate_batch(
                model,
                batch,
                k,
                train_config.max_clicks_per_round,
                rng,
                train_config.train_all_rounds,
            )
            loss = terms["total"]
            if not torch.isfinite(loss):
                if last_good is not None:
                    model.load_state_dict(last_good)
                result.diverged = True
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; restored last good parameters"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            for key in sums:
                sums[key] += float(terms[key])
            n_batches += 1

        probe = None
        if (
            probe_set
            and train_config.probe_every > 0
            and (epoch % train_config.probe_every == 0 or epoch == train_config.epochs)
        ):
            model.eval()
            probe = probe_noc(
                model, probe_set, train_config.probe_max_clicks, train_config.probe_target
            )
            model.train()

        stats = EpochStats(
            epoch=epoch,
            loss_total=sums["total"] / max(n_batches, 1),
            loss_corrected=sums["corrected"] / max(n_batches, 1),
            loss_updated=sums["updated"] / max(n_batches, 1),
            loss_prediction=sums["prediction"] / max(n_batches, 1),
            lr=optimizer.param_groups[0]["lr"],
            probe_noc=probe,
            seconds=time.perf_counter() - t0,
        )
        result.log.append(stats)
        if log_hook:
            log_hook(stats)
        last_good = copy.deepcopy(model.state_dict())

    model.eval()
    return result
