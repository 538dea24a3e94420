"""Core value types for interactive segmentation: samples, clicks, click maps.

Conventions used throughout the package:
  * images are float arrays of shape (H, W, 3) with values in [0, 1]
  * masks are (H, W) arrays containing exactly {0, 1}
  * feedback maps are (H, W) float arrays in [0, 1] (previous-round probabilities)
  * click coordinates are (x=column, y=row), both zero-based integers
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BACKGROUND = 0
FOREGROUND = 1

#: Default radius (pixels) of the disk drawn for each click in the interaction map.
DEFAULT_CLICK_RADIUS = 5


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass(frozen=True)
class Click:
    """A single user click: position, label and the interaction round it belongs to."""

    x: int
    y: int
    label: int
    round: int = 0

    def __post_init__(self):
        if self.label not in (BACKGROUND, FOREGROUND):
            raise ValidationError(f"click label must be 0 or 1, got {self.label}")
        if self.round < 0:
            raise ValidationError(f"click round must be >= 0, got {self.round}")

    @property
    def is_foreground(self) -> bool:
        return self.label == FOREGROUND


@dataclass
class ClickSet:
    """Ordered collection of clicks; the last element is the newest click.

    Positions must be unique: a repeated click on an occupied pixel is rejected
    so that round counting stays consistent.
    """

    clicks: list[Click] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for c in self.clicks:
            if (c.x, c.y) in seen:
                raise ValidationError(f"duplicate click at ({c.x}, {c.y})")
            seen.add((c.x, c.y))

    def __len__(self) -> int:
        return len(self.clicks)

    def __iter__(self):
        return iter(self.clicks)

    def __getitem__(self, i):
        return self.clicks[i]

    @property
    def newest(self) -> Click | None:
        return self.clicks[-1] if self.clicks else None

    def occupied(self, x: int, y: int) -> bool:
        return any(c.x == x and c.y == y for c in self.clicks)

    def add(self, click: Click) -> "ClickSet":
        """Return a new ClickSet with ``click`` appended; rejects occupied pixels."""
        if self.occupied(click.x, click.y):
            raise ValidationError(f"pixel ({click.x}, {click.y}) already clicked")
        return ClickSet(self.clicks + [click])

    def without_last(self) -> "ClickSet":
        if not self.clicks:
            raise ValidationError("click set is empty")
        return ClickSet(self.clicks[:-1])


@dataclass
class Sample:
    """An RGB image paired with a binary ground-truth mask."""

    image: np.ndarray  # (H, W, 3) float in [0, 1]
    gt_mask: np.ndarray  # (H, W) containing {0, 1}
    id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.gt_mask = np.asarray(self.gt_mask)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValidationError(f"image must be (H, W, 3), got {self.image.shape}")
        if self.gt_mask.shape != self.image.shape[:2]:
            raise ValidationError(
                f"mask shape {self.gt_mask.shape} does not match image {self.image.shape[:2]}"
            )
        uniq = np.unique(self.gt_mask)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValidationError(f"mask values must be exactly 0 or 1, got {uniq}")
        self.gt_mask = self.gt_mask.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


def zero_feedback(height: int, width: int) -> np.ndarray:
    """All-zero feedback map used before the first interaction round."""
    return np.zeros((height, width), dtype=np.float32)


def validate_clicks_in_bounds(clicks: ClickSet, height: int, width: int) -> None:
    for c in clicks:
        if not (0 <= c.x < width and 0 <= c.y < height):
            raise ValidationError(
                f"click ({c.x}, {c.y}) outside {height}x{width} image bounds"
            )


def encode_clicks(
    clicks: ClickSet, height: int, width: int, radius: int = DEFAULT_CLICK_RADIUS
) -> np.ndarray:
    """Rasterize clicks into a two-channel interaction map.

    Channel 0 holds background clicks, channel 1 foreground clicks.  Each click
    is drawn as a filled disk: pixel (i, j) of channel c is 1 iff some click of
    label c satisfies sqrt((i - y)^2 + (j - x)^2) <= radius.

    Returns an (H, W, 2) float32 array containing {0, 1}.
    """
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    validate_clicks_in_bounds(clicks, height, width)
    smap = np.zeros((height, width, 2), dtype=np.float32)
    if len(clicks) == 0:
        return smap
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    r2 = radius * radius
    for c in clicks:
        disk = (rows - c.y) ** 2 + (cols - c.x) ** 2 <= r2
        smap[:, :, c.label][disk] = 1.0
    return smap


def box_bounds(
    cy: int, cx: int, ratio: float, height: int, width: int
) -> tuple[int, int, int, int]:
    """Half-open (y0, y1, x0, x1) of a centered box of side ``round(ratio * dim)``.

    The box spans rows [cy - h//2, cy - h//2 + h) with h = round(ratio * height),
    clipped to the frame; columns likewise.  Deterministic for every input.
    """
    if not (0 < ratio <= 1):
        raise ValidationError(f"box ratio must be in (0, 1], got {ratio}")
    h = int(round(ratio * height))
    w = int(round(ratio * width))
    y0 = cy - h // 2
    x0 = cx - w // 2
    y1 = min(y0 + h, height)
    x1 = min(x0 + w, width)
    return max(y0, 0), max(y1, 0), max(x0, 0), max(x1, 0)


def make_box_mask(
    center: Click, ratio: float, height: int, width: int
) -> np.ndarray:
    """Binary mask of an axis-aligned box centered on ``center``.

    ``center`` coordinates are interpreted in the target (height, width) grid,
    so callers working at feature resolution must map the click there first.
    """
    y0, y1, x0, x1 = box_bounds(center.y, center.x, ratio, height, width)
    mask = np.zeros((height, width), dtype=np.float32)
    mask[y0:y1, x0:x1] = 1.0
    return mask
