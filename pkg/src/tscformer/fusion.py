"""Token-to-feature injection and the fusion back into each branch.

Bridge tokens are projected by one fully connected layer per insertion
point and modality, reshaped to a (C', H, W) map, and tiled across the T
frames (so the projection's parameter count stays independent of T).
Fusion then channel-concatenates the injected map with the branch
features and restores the branch width with a 1x1 convolution; add mode
sums instead, which requires matching channel counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import Conv2d, Linear
from .tensor import Parameter, Tensor, add, concat, repeat_new_axis, reshape

__all__ = ["FusionConfig", "TokensToMap", "fuse"]

FUSION_MODES = ("concat", "add")
MAX_MAP_ELEMENTS = 1 << 26


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "concat"

    def __post_init__(self):
        if self.mode == "cross_attention":
            raise ConfigError(
                "cross_attention fusion is recognized but unsupported; use concat or add"
            )
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode {self.mode!r} must be one of {FUSION_MODES}")


class TokensToMap:
    """Fully connected projection of flattened tokens to one feature map,
    tiled over the frame axis: (B, L, D) -> (B, T, C, H, W)."""

    def __init__(
        self,
        name: str,
        token_count: int,
        token_dim: int,
        target: tuple[int, int, int],
        rng: np.random.Generator,
    ):
        c, h, w = target
        if c * h * w > MAX_MAP_ELEMENTS:
            raise ConfigError(
                f"projection target {target} exceeds {MAX_MAP_ELEMENTS} elements"
            )
        self.target = (c, h, w)
        self.proj = Linear(f"{name}.proj", token_count * token_dim, c * h * w, rng=rng)

    def __call__(self, tokens: Tensor, frames: int) -> Tensor:
        b, l, d = tokens.shape
        c, h, w = self.target
        flat = reshape(tokens, (b, l * d))
        maps = reshape(self.proj(flat), (b, c, h, w))
        return repeat_new_axis(maps, 1, frames)

    def params(self) -> list[Parameter]:
        return self.proj.params()


def fuse(feat: Tensor, injected: Tensor, conv: Conv2d, mode: str) -> Tensor:
    """Merge an injected token map into branch features, preserving the
    branch shape so downstream stages stay pluggable."""
    if feat.ndim != 5 or injected.ndim != 5:
        raise DimensionError(
            f"fuse needs (B, T, C, H, W) operands, got {feat.shape} and {injected.shape}"
        )
    b, t, c, h, w = feat.shape
    if injected.shape[0] != b or injected.shape[1] != t or injected.shape[3:] != (h, w):
        raise DimensionError(
            f"injected map {injected.shape} does not align with features {feat.shape}"
        )
    if mode == "concat":
        merged = concat([feat, injected], axis=2)
    elif mode == "add":
        if injected.shape[2] != c:
            raise DimensionError(
                f"add-mode fusion needs matching channels: {feat.shape} vs {injected.shape}"
            )
        merged = add(feat, injected)
    else:
        raise ConfigError(f"fusion mode {mode!r} must be one of {FUSION_MODES}")
    cm = merged.shape[2]
    restored = conv(reshape(merged, (b * t, cm, h, w)))
    return reshape(restored, (b, t, c, h, w))
