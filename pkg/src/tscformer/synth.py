"""Synthetic RGB + event clip generation for desk-scale training.

Each class renders a moving geometric pattern: the shape (and, for larger
class counts, the vertical speed tier) is keyed to the class index, the
start phase and horizontal placement vary per clip. Events are emitted at
pattern edges between consecutive frames, so both modalities carry the
class signal. Everything is deterministic in the seed.

Shapes are all symmetric under horizontal flips and the motion is purely
vertical, so the flip augmentation of the training recipe cannot alias
two classes.
"""

from __future__ import annotations

import numpy as np

from .augment import ClipPair
from .errors import ValidationError
from .events import EventPoint, EventStream, bin_events, render_event_frames
from .tensor import Tensor

SHAPES = ("square", "disk", "cross", "ring", "diamond", "bars")
COLORS = ((0.9, 0.25, 0.1), (0.1, 0.9, 0.25), (0.25, 0.1, 0.9))
FRAME_DT = 10_000  # microseconds per frame window
BACKGROUND = 0.05


def synth_dataset(
    seed: int,
    num_classes: int,
    samples_per_class: int,
    frames: int = 8,
    height: int = 32,
    width: int = 32,
) -> list[ClipPair]:
    if num_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {num_classes}")
    if samples_per_class < 1:
        raise ValidationError(f"samples_per_class must be >= 1, got {samples_per_class}")
    if height < 12 or width < 12:
        raise ValidationError(f"canvas {height}x{width} too small for the patterns")
    clips = []
    for label in range(num_classes):
        for index in range(samples_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, label, index]))
            clips.append(_render_clip(label, rng, frames, height, width))
    return clips


def _render_clip(label: int, rng: np.random.Generator, frames: int, h: int, w: int) -> ClipPair:
    shape = SHAPES[label % len(SHAPES)]
    speed = 2 + label // len(SHAPES)
    size = max(3, min(h, w) // 5)
    cx = int(rng.integers(size + 1, w - size - 1))
    band_lo, band_hi = size + 1, h - size - 2
    period = 2 * (band_hi - band_lo)
    phase = int(rng.integers(0, period))

    def center_row(step: int) -> int:
        m = (phase + step * speed) % period
        return band_lo + (m if m <= period // 2 else period - m)

    # one extra mask to drive events for the final open window
    masks = [_shape_mask(shape, h, w, center_row(j), cx, size) for j in range(frames + 1)]

    color = COLORS[label % len(COLORS)]
    rgb = np.full((frames, 3, h, w), BACKGROUND, dtype=np.float64)
    for j in range(frames):
        for c in range(3):
            rgb[j, c] = np.where(masks[j], color[c], BACKGROUND)

    points = []
    for j in range(frames):
        t = j * FRAME_DT + FRAME_DT // 2
        turned_on = masks[j + 1] & ~masks[j]
        turned_off = masks[j] & ~masks[j + 1]
        for row, col in np.argwhere(turned_on):
            points.append(EventPoint(int(col), int(row), t, 1))
        for row, col in np.argwhere(turned_off):
            points.append(EventPoint(int(col), int(row), t, -1))
    stream = EventStream(points, w, h)

    frame_times = tuple(j * FRAME_DT for j in range(frames))
    counts = bin_events(stream, frame_times, h, w)
    event_clip = render_event_frames(counts)
    return ClipPair(rgb=Tensor(rgb), event=event_clip, label=label, frame_times=frame_times)


def _shape_mask(shape: str, h: int, w: int, cy: int, cx: int, size: int) -> np.ndarray:
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    dy = rows - cy
    dx = cols - cx
    if shape == "square":
        return (np.abs(dy) <= size) & (np.abs(dx) <= size)
    if shape == "disk":
        return dy * dy + dx * dx <= size * size
    if shape == "cross":
        return ((np.abs(dx) <= 1) & (np.abs(dy) <= size)) | (
            (np.abs(dy) <= 1) & (np.abs(dx) <= size)
        )
    if shape == "ring":
        r2 = dy * dy + dx * dx
        return (r2 <= size * size) & (r2 >= (size - 2) * (size - 2))
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= size
    if shape == "bars":
        return (np.abs(dy) <= size) & (np.abs(dx) <= size) & (dy % 2 == 0)
    raise ValidationError(f"unknown shape {shape!r}")
