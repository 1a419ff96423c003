"""Clip pairs and the training augmentation chain.

Train mode: one multi-scale crop (scale drawn from {1, 0.875, 0.75, 0.66}
of the short side, positioned at one of four corners or the center),
bilinear resize to the target size, then a horizontal flip with
probability 0.5. The same window and flip decision apply to every frame
of both modalities so their geometry stays aligned. Eval mode: center
crop at scale 1 plus resize only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import Tensor

CROP_SCALES = (1.0, 0.875, 0.75, 0.66)


@dataclass(frozen=True)
class ClipPair:
    """Aligned RGB and event-frame clips, both (T, 3, H, W) in [0, 1]."""

    rgb: Tensor
    event: Tensor
    label: int
    frame_times: tuple[int, ...]

    def __post_init__(self):
        if self.rgb.ndim != 4 or self.rgb.shape[1] != 3:
            raise DimensionError(f"rgb clip must be (T, 3, H, W), got {self.rgb.shape}")
        if self.rgb.shape != self.event.shape:
            raise DimensionError(
                f"rgb {self.rgb.shape} and event {self.event.shape} clips must share extents"
            )
        if len(self.frame_times) != self.rgb.shape[0]:
            raise ValidationError(
                f"{len(self.frame_times)} frame times for {self.rgb.shape[0]} frames"
            )
        if any(b <= a for a, b in zip(self.frame_times, self.frame_times[1:])):
            raise ValidationError("frame_times must be strictly increasing")


def resize_bilinear(clip: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize over the trailing two axes. Identity when the size
    is unchanged (half-pixel-centered sampling grid)."""
    *lead, h, w = clip.shape
    if (h, w) == (out_h, out_w):
        return clip.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(int)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)

    flat = clip.reshape(-1, h, w)
    top = flat[:, y0[:, None], x0] * (1 - wx) + flat[:, y0[:, None], x1] * wx
    bottom = flat[:, y1[:, None], x0] * (1 - wx) + flat[:, y1[:, None], x1] * wx
    out = top * (1 - wy[:, None]) + bottom * wy[:, None]
    return out.reshape(*lead, out_h, out_w)


def apply_geometry(
    clip: np.ndarray, top: int, left: int, size: int, flip: bool, target: int
) -> np.ndarray:
    """Crop a size x size window at (top, left), resize to target, maybe flip."""
    window = clip[..., top : top + size, left : left + size]
    out = resize_bilinear(window, target, target)
    if flip:
        out = out[..., ::-1].copy()
    return out


def _crop_positions(h: int, w: int, size: int) -> list[tuple[int, int]]:
    return [
        (0, 0),
        (0, w - size),
        (h - size, 0),
        (h - size, w - size),
        ((h - size) // 2, (w - size) // 2),
    ]


def augment(
    pair: ClipPair,
    rng: np.random.Generator | None,
    mode: str,
    target: int = 224,
) -> ClipPair:
    """Apply the crop/resize/flip chain identically to both modalities."""
    if mode not in ("train", "eval"):
        raise ValidationError(f"augment mode {mode!r} must be train or eval")
    t, _, h, w = pair.rgb.shape
    if h < 8 or w < 8:
        raise ValidationError(f"clip spatial extents {h}x{w} below the 8-pixel minimum")
    short = min(h, w)
    if target > short:
        raise ValidationError(
            f"target {target} larger than the scale-1 crop source {short}"
        )
    if mode == "train":
        if rng is None:
            raise ValidationError("train-mode augmentation needs an rng")
        crop = max(1, round(float(rng.choice(CROP_SCALES)) * short))
        top, left = _crop_positions(h, w, crop)[int(rng.integers(0, 5))]
        flip = bool(rng.random() < 0.5)
    else:
        crop = short
        top, left = (h - crop) // 2, (w - crop) // 2
        flip = False
    rgb = apply_geometry(pair.rgb.data, top, left, crop, flip, target)
    event = apply_geometry(pair.event.data, top, left, crop, flip, target)
    return replace(pair, rgb=Tensor(rgb), event=Tensor(event))
