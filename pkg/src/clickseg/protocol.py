"""Automatic click-budget evaluation protocol and report files.

Each image runs the standard loop: pick the misclassified pixel farthest from
its error-region boundary, add it as a click, predict, record IoU; stop after
``max_clicks`` clicks or as soon as every IoU target has been reached.  An
image that never reaches a target within the budget counts as a failure and
enters the mean click count at the cap.

Per-click timing (SPC) covers only the model forward, never click selection.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .clicking import build_error_region, select_next_click
from .core import Sample
from .engine import InteractiveSession
from .metrics import assd, boundary_iou, iou
from .net import SegmentationModel


@dataclass
class ImageResult:
    id: str
    trajectory: list[float]  # IoU after click 1, 2, ...
    noc: dict[float, int]  # target alpha -> clicks to reach (cap on failure)
    reached: dict[float, bool]
    failed: bool = False
    error: str = ""


@dataclass
class EvalReport:
    max_clicks: int
    targets: tuple[float, ...]
    metric_clicks: tuple[int, ...]
    images: list[ImageResult] = field(default_factory=list)
    noc_mean: dict[float, float] = field(default_factory=dict)
    nof: dict[float, int] = field(default_factory=dict)
    iou_at: dict[int, float] = field(default_factory=dict)
    biou_at: dict[int, float] = field(default_factory=dict)
    assd_at: dict[int, float | None] = field(default_factory=dict)
    assd_undefined: dict[int, int] = field(default_factory=dict)
    miou_curve: list[float] = field(default_factory=list)
    spc_seconds: float = 0.0
    n_failed: int = 0
    started_utc: str = ""
    wall_seconds: float = 0.0

    @property
    def n_images(self) -> int:
        return len(self.images)


def _padded(trajectory: list[float], n: int) -> float:
    """IoU at click n with the final value carried forward past early stops."""
    if not trajectory:
        return 0.0
    return trajectory[min(n, len(trajectory)) - 1]


def noc_from_trajectory(trajectory: list[float], alpha: float, cap: int) -> tuple[int, bool]:
    """(clicks to first reach alpha, reached?); failures count at the cap."""
    for i, v in enumerate(trajectory, start=1):
        if v >= alpha:
            return i, True
    return cap, False


def run_protocol(
    model: SegmentationModel,
    dataset: list[Sample],
    max_clicks: int = 20,
    targets: tuple[float, ...] = (0.85, 0.90),
    band_px: int = 2,
    metric_clicks: tuple[int, ...] = (1, 5),
    threshold: float = 0.5,
) -> EvalReport:
    report = EvalReport(
        max_clicks=max_clicks,
        targets=tuple(targets),
        metric_clicks=tuple(metric_clicks),
        started_utc=datetime.now(timezone.utc).isoformat(),
    )
    t_start = time.perf_counter()
    click_times: list[float] = []
    masks_at: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {n: [] for n in metric_clicks}

    for sample in dataset:
        session = InteractiveSession(model, sample)
        gt = sample.gt_mask
        trajectory: list[float] = []
        pred = np.zeros_like(gt, dtype=np.float32)
        final_bin = pred >= threshold
        failed = False
        err = ""
        clicked: set[tuple[int, int]] = set()
        try:
            for click_index in range(1, max_clicks + 1):
                region = build_error_region(pred, gt, threshold)
                click = select_next_click(region, gt, click_index, exclude=clicked)
                if click is None:  # pixel-perfect, or nothing clickable left
                    break
                clicked.add((click.x, click.y))
                t0 = time.perf_counter()
                pred = session.add_click(click)
                click_times.append(time.perf_counter() - t0)
                final_bin = pred >= threshold
                trajectory.append(iou(final_bin, gt))
                if metric_clicks and click_index in metric_clicks:
                    masks_at[click_index].append((final_bin.copy(), gt))
                if targets and all(max(trajectory) >= a for a in targets):
                    break
        except Exception as e:  # model failure: count and move on
            failed = True
            err = f"{type(e).__name__}: {e}"

        if failed:
            report.images.append(
                ImageResult(sample.id, trajectory, {}, {}, failed=True, error=err)
            )
            continue
        # early-stopped trajectories keep their final mask for later click counts
        for n in metric_clicks:
            if len(trajectory) < n:
                masks_at[n].append((final_bin.copy(), gt))
        noc = {}
        reached = {}
        for a in targets:
            noc[a], reached[a] = noc_from_trajectory(trajectory, a, max_clicks)
        report.images.append(ImageResult(sample.id, trajectory, noc, reached))

    ok = [r for r in report.images if not r.failed]
    report.n_failed = len(report.images) - len(ok)
    for a in targets:
        report.noc_mean[a] = float(np.mean([r.noc[a] for r in ok])) if ok else float("nan")
        report.nof[a] = sum(1 for r in ok if not r.reached[a])
    for n in metric_clicks:
        pairs = masks_at[n]
        report.iou_at[n] = float(np.mean([iou(p, g) for p, g in pairs])) if pairs else float("nan")
        report.biou_at[n] = (
            float(np.mean([boundary_iou(p, g, band_px) for p, g in pairs])) if pairs else float("nan")
        )
        vals = [assd(p, g) for p, g in pairs]
        defined = [v for v in vals if v is not None]
        report.assd_undefined[n] = len(vals) - len(defined)
        report.assd_at[n] = float(np.mean(defined)) if defined else None
    report.miou_curve = [
        float(np.mean([_padded(r.trajectory, n) for r in ok])) if ok else float("nan")
        for n in range(1, max_clicks + 1)
    ]
    report.spc_seconds = float(np.mean(click_times)) if click_times else 0.0
    report.wall_seconds = time.perf_counter() - t_start
    return report


# ---------------------------------------------------------------------------
# report files


def _pct(a: float) -> str:
    return f"{round(a * 100):g}"


def write_report(
    report: EvalReport,
    out_dir,
    config_echo: dict | None = None,
    checkpoint_hash: str = "",
    seed: int | None = None,
) -> dict[str, Path]:
    """Write summary.csv, trajectories.csv, miou_curve.csv, and manifest.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["metric", "value"])
        for a in report.targets:
            wr.writerow([f"NoC@{_pct(a)}", f"{report.noc_mean[a]:.4f}"])
        for a in report.targets:
            wr.writerow([f"NoF_{report.max_clicks}@{_pct(a)}", report.nof[a]])
        for n in report.metric_clicks:
            wr.writerow([f"IoU@{n}", f"{report.iou_at[n]:.4f}"])
            wr.writerow([f"BIoU@{n}", f"{report.biou_at[n]:.4f}"])
            a_val = report.assd_at[n]
            wr.writerow([f"ASSD@{n}", "undefined" if a_val is None else f"{a_val:.4f}"])
            wr.writerow([f"ASSD@{n}_undefined_count", report.assd_undefined[n]])
        wr.writerow(["SPC", f"{report.spc_seconds:.6f}"])
        wr.writerow(["images", report.n_images])
        wr.writerow(["failed", report.n_failed])
    paths["summary"] = summary

    traj = out / "trajectories.csv"
    with open(traj, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["image_id", "click_index", "iou"])
        for r in report.images:
            for i, v in enumerate(r.trajectory, start=1):
                wr.writerow([r.id, i, f"{v:.6f}"])
    paths["trajectories"] = traj

    curve = out / "miou_curve.csv"
    with open(curve, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["click_index", "mean_iou"])
        for i, v in enumerate(report.miou_curve, start=1):
            wr.writerow([i, f"{v:.6f}"])
    paths["miou_curve"] = curve

    manifest = out / "manifest.txt"
    lines = [
        f"started_utc={report.started_utc}",
        f"wall_seconds={report.wall_seconds:.3f}",
        f"images={report.n_images}",
        f"failed={report.n_failed}",
        f"max_clicks={report.max_clicks}",
        f"targets={','.join(str(t) for t in report.targets)}",
        f"spc_seconds={report.spc_seconds:.6f}",
        f"checkpoint_sha256={checkpoint_hash}",
    ]
    if seed is not None:
        lines.append(f"seed={seed}")
    if config_echo:
        lines.append("[config]")
        lines.extend(f"{k}={config_echo[k]}" for k in sorted(config_echo))
    manifest.write_text("\n".join(lines) + "\n")
    paths["manifest"] = manifest
    return paths
