"""Dataset generation, loading, augmentation, and checkpoint persistence.

The synthetic generator stands in for large natural-image corpora at desk
scale: each sample is one foreground object (ellipse or blobby polygon,
optionally notched by occluder bars) over a textured background with distractor
shapes in other colors.  Every mask is a single 4-connected component covering
2..60% of the frame, and generation is bit-reproducible from (spec, seed).
"""
from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from .clicking import FOUR_CONNECTED
from .core import Sample, ValidationError
from .net import ModelConfig, SegmentationModel

AREA_MIN = 0.02
AREA_MAX = 0.60


@dataclass(frozen=True)
class DatasetSpec:
    count: int = 100
    height: int = 96
    width: int = 96
    seed: int = 0
    # relative weights of the foreground shape families
    ellipse_weight: float = 0.5
    polygon_weight: float = 0.5
    occluder_prob: float = 0.4
    distractors: tuple[int, int] = (2, 4)
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("count must be >= 1")
        if self.height < 16 or self.width < 16:
            raise ValidationError("image size too small")


def _random_color(rng: np.random.Generator, away_from=(), min_dist: float = 0.25) -> np.ndarray:
    for _ in range(64):
        c = rng.uniform(0.05, 0.95, size=3)
        if all(np.linalg.norm(c - other) >= min_dist for other in away_from):
            return c
    return c


def _ellipse_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=np.uint8)
    cx = int(rng.integers(w // 4, 3 * w // 4))
    cy = int(rng.integers(h // 4, 3 * h // 4))
    ax = int(rng.integers(w // 8, w // 3))
    ay = int(rng.integers(h // 8, h // 3))
    angle = float(rng.uniform(0, 180))
    cv2.ellipse(mask, (cx, cy), (ax, ay), angle, 0, 360, 1, -1)
    return mask


def _polygon_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Star-convex blob: radii jittered around a base radius at sorted angles."""
    mask = np.zeros((h, w), dtype=np.uint8)
    cx = rng.integers(w // 4, 3 * w // 4)
    cy = rng.integers(h // 4, 3 * h // 4)
    n = int(rng.integers(5, 10))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    base = rng.uniform(min(h, w) / 6, min(h, w) / 3)
    radii = base * rng.uniform(0.55, 1.0, size=n)
    pts = np.stack(
        [cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1
    ).astype(np.int32)
    cv2.fillPoly(mask, [pts], 1)
    return mask


def _occluder_bar(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Thin rotated bar used to carve a notch out of the object."""
    mask = np.zeros((h, w), dtype=np.uint8)
    cx = float(rng.integers(0, w))
    cy = float(rng.integers(0, h))
    length = float(rng.uniform(0.4, 1.2)) * max(h, w)
    thickness = float(rng.uniform(0.03, 0.08)) * min(h, w)
    angle = float(rng.uniform(0, 180))
    box = cv2.boxPoints(((cx, cy), (length, thickness), angle))
    cv2.fillPoly(mask, [box.astype(np.int32)], 1)
    return mask


def _single_component(mask: np.ndarray) -> bool:
    _, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    return n == 1


def _background(rng: np.random.Generator, h: int, w: int, color: np.ndarray) -> np.ndarray:
    ramp_dir = rng.uniform(-1, 1, size=2)
    yy, xx = np.mgrid[0:h, 0:w]
    ramp = (yy * ramp_dir[0] + xx * ramp_dir[1]) / max(h, w)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-6) - 0.5
    img = np.clip(color[None, None, :] + 0.2 * ramp[:, :, None], 0, 1)
    return img.astype(np.float32)


def generate_sample(spec: DatasetSpec, index: int) -> Sample:
    """Generate one reproducible sample; index seeds an independent substream."""
    rng = np.random.default_rng([spec.seed, index])
    h, w = spec.height, spec.width
    area_lo, area_hi = AREA_MIN * h * w, AREA_MAX * h * w

    bg_color = _random_color(rng)
    image = _background(rng, h, w, bg_color)
    fg_color = _random_color(rng, away_from=[bg_color], min_dist=0.25)

    n_dis = int(rng.integers(spec.distractors[0], spec.distractors[1] + 1))
    for _ in range(n_dis):
        dmask = _ellipse_mask(rng, h, w) if rng.random() < 0.5 else _polygon_mask(rng, h, w)
        dcolor = _random_color(rng, away_from=[fg_color], min_dist=0.15)
        image[dmask > 0] = dcolor

    total = spec.ellipse_weight + spec.polygon_weight
    mask = None
    for _ in range(50):
        fam = rng.random() * total
        cand = _ellipse_mask(rng, h, w) if fam < spec.ellipse_weight else _polygon_mask(rng, h, w)
        if rng.random() < spec.occluder_prob:
            carved = ((cand > 0) & (_occluder_bar(rng, h, w) == 0)).astype(np.uint8)
            if carved.any() and _single_component(carved):
                cand = carved
        area = cand.sum()
        if area_lo <= area <= area_hi and _single_component(cand):
            mask = cand
            break
    if mask is None:  # guaranteed-valid fallback: centered ellipse
        mask = np.zeros((h, w), dtype=np.uint8)
        cv2.ellipse(mask, (w // 2, h // 2), (w // 4, h // 4), 0, 0, 360, 1, -1)

    image[mask > 0] = fg_color
    image = image + rng.normal(0, spec.noise_sigma, size=image.shape)
    image = np.clip(image, 0, 1).astype(np.float32)
    return Sample(image=image, gt_mask=mask, id=f"synth-{spec.seed}-{index:05d}")


def generate_synthetic(spec: DatasetSpec) -> list[Sample]:
    """Deterministic synthetic dataset; same spec + seed gives identical bits."""
    return [generate_sample(spec, i) for i in range(spec.count)]


# ---------------------------------------------------------------------------
# directory IO


class DirectoryLoadError(ValidationError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("dataset load failed:\n  " + "\n  ".join(problems))


def save_dataset(samples: list[Sample], root) -> None:
    """Write samples in the images/<id>.png + masks/<id>.png layout."""
    from pathlib import Path

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        img = (s.image * 255).round().astype(np.uint8)
        Image.fromarray(img).save(root / "images" / f"{s.id}.png")
        Image.fromarray(s.gt_mask * 255).save(root / "masks" / f"{s.id}.png")


def load_directory(root) -> list[Sample]:
    """Load images/<id>.(png|jpg) paired with masks/<id>.png.

    Mask pixels > 127 are foreground.  All pairing/size problems are collected
    and reported together in one error listing the offending stems.
    """
    from pathlib import Path

    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        warnings.warn(f"{root} has no images/ + masks/ layout; empty dataset")
        return []
    images = {p.stem: p for p in sorted(img_dir.iterdir()) if p.suffix.lower() in (".png", ".jpg", ".jpeg")}
    masks = {p.stem: p for p in sorted(mask_dir.iterdir()) if p.suffix.lower() == ".png"}
    if not images and not masks:
        warnings.warn(f"{root} is empty")
        return []

    problems = []
    for stem in sorted(set(images) - set(masks)):
        problems.append(f"{stem}: image without mask")
    for stem in sorted(set(masks) - set(images)):
        problems.append(f"{stem}: mask without image")

    samples = []
    for stem in sorted(set(images) & set(masks)):
        img = np.asarray(Image.open(images[stem]).convert("RGB"), dtype=np.float32) / 255.0
        mask_raw = np.asarray(Image.open(masks[stem]).convert("L"))
        if mask_raw.shape != img.shape[:2]:
            problems.append(
                f"{stem}: size mismatch image {img.shape[:2]} vs mask {mask_raw.shape}"
            )
            continue
        samples.append(Sample(image=img, gt_mask=(mask_raw > 127).astype(np.uint8), id=stem))
    if problems:
        raise DirectoryLoadError(problems)
    return samples


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    scale_range: tuple[float, float] = (0.75, 1.40)
    out_size: tuple[int, int] = (96, 96)  # (height, width)
    hflip: bool = True
    brightness: float = 0.15
    contrast: float = 0.15
    rgb_shift: float = 0.05
    geometric: bool = True
    photometric: bool = True


def augment(sample: Sample, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> Sample:
    """Random scale + crop + flip (image and mask in lockstep) and image-only jitter."""
    image, mask = sample.image, sample.gt_mask
    if cfg.geometric:
        s = float(rng.uniform(*cfg.scale_range))
        nh = max(1, int(round(image.shape[0] * s)))
        nw = max(1, int(round(image.shape[1] * s)))
        image = cv2.resize(image, (nw, nh), interpolation=cv2.INTER_LINEAR)
        mask = cv2.resize(mask, (nw, nh), interpolation=cv2.INTER_NEAREST)

        th, tw = cfg.out_size
        if nh < th or nw < tw:  # pad-then-crop fallback
            ph, pw = max(0, th - nh), max(0, tw - nw)
            image = np.pad(image, ((0, ph), (0, pw), (0, 0)))
            mask = np.pad(mask, ((0, ph), (0, pw)))
            nh, nw = image.shape[:2]
        y0 = int(rng.integers(0, nh - th + 1))
        x0 = int(rng.integers(0, nw - tw + 1))
        image = image[y0 : y0 + th, x0 : x0 + tw]
        mask = mask[y0 : y0 + th, x0 : x0 + tw]

        if cfg.hflip and rng.random() < 0.5:
            image = image[:, ::-1]
            mask = mask[:, ::-1]

    if cfg.photometric:
        image = image.astype(np.float32)
        image = image + float(rng.uniform(-cfg.brightness, cfg.brightness))
        c = float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast))
        image = (image - image.mean()) * c + image.mean()
        image = image + rng.uniform(-cfg.rgb_shift, cfg.rgb_shift, size=3).astype(np.float32)
        image = np.clip(image, 0, 1)

    return Sample(image=np.ascontiguousarray(image), gt_mask=np.ascontiguousarray(mask), id=sample.id)


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"CLICKSEG-CKPT-1\n"


def save_checkpoint(model: SegmentationModel, path) -> None:
    """Serialize model weights + architecture metadata; byte-deterministic.

    Layout: magic, 4-byte header length, JSON header (plain text: architecture
    dict, its hash, tensor table), then raw little-endian tensor bytes in
    table order.
    """
    cfg = model.config
    tensors = []
    blobs = []
    state = model.state_dict()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name].detach().numpy())
        blob = arr.tobytes()  # native little-endian layout
        tensors.append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "nbytes": len(blob)}
        )
        blobs.append(blob)
    header = {
        "format": "clickseg-checkpoint",
        "version": 1,
        "arch": cfg.arch_dict(),
        "arch_hash": cfg.arch_hash(),
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack(">I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def _read_header(path) -> tuple[dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack(">I", fh.read(4))
        try:
            header = json.loads(fh.read(n))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ValidationError(f"{path}: corrupted checkpoint metadata: {e}") from e
        offset = len(_CKPT_MAGIC) + 4 + n
    for key in ("arch", "arch_hash", "tensors"):
        if key not in header:
            raise ValidationError(f"{path}: corrupted checkpoint metadata: missing {key!r}")
    return header, offset


def checkpoint_config(path) -> ModelConfig:
    header, _ = _read_header(path)
    try:
        cfg = ModelConfig(**header["arch"])
    except TypeError as e:
        raise ValidationError(f"{path}: corrupted architecture record: {e}") from e
    if cfg.arch_hash() != header["arch_hash"]:
        raise ValidationError(
            f"{path}: architecture hash mismatch (stored {header['arch_hash'][:12]}, "
            f"recomputed {cfg.arch_hash()[:12]})"
        )
    return cfg


def load_checkpoint(path, expected: ModelConfig | None = None) -> SegmentationModel:
    """Rebuild a model from a checkpoint; refuses mismatched configurations.

    When ``expected`` is given, every differing architecture field is listed
    in the error rather than silently reconfiguring.
    """
    import torch

    header, offset = _read_header(path)
    cfg = checkpoint_config(path)
    if expected is not None and expected != cfg:
        diffs = [
            f"{k}: checkpoint={v!r} expected={getattr(expected, k)!r}"
            for k, v in cfg.arch_dict().items()
            if getattr(expected, k) != v
        ]
        raise ValidationError("checkpoint/config mismatch: " + "; ".join(diffs))
    model = SegmentationModel(cfg)
    state = {}
    with open(path, "rb") as fh:
        fh.seek(offset)
        for t in header["tensors"]:
            blob = fh.read(t["nbytes"])
            if len(blob) != t["nbytes"]:
                raise ValidationError(f"{path}: truncated tensor data for {t['name']}")
            arr = np.frombuffer(blob, dtype=np.dtype(t["dtype"])).reshape(t["shape"]).copy()
            state[t["name"]] = torch.from_numpy(arr)
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ValidationError(f"{path}: checkpoint missing tensors: {sorted(missing)}")
    model.load_state_dict(state)
    model.eval()
    return model


def checkpoint_content_hash(path) -> str:
    """sha256 of the checkpoint file, for run manifests."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
