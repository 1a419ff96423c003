"""Temporal shift: move channel folds one step along the frame axis.

Offline bidirectional variant with zero padding: with fold size
f = C // divisions, channels [0, f) take their values from the next
frame, channels [f, 2f) from the previous frame, and the rest stay
untouched. The gradient of the shift is its transpose shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .tensor import Tensor, _accumulate, _record

__all__ = ["ShiftConfig", "temporal_shift"]


@dataclass(frozen=True)
class ShiftConfig:
    divisions: int = 8

    def __post_init__(self):
        if self.divisions < 2:
            raise ConfigError(f"shift divisions must be >= 2, got {self.divisions}")


def _shift_arrays(x: np.ndarray, fold: int) -> np.ndarray:
    out = np.zeros_like(x)
    out[:, :-1, :fold] = x[:, 1:, :fold]  # first fold pulls from the future
    out[:, 1:, fold : 2 * fold] = x[:, :-1, fold : 2 * fold]  # second from the past
    out[:, :, 2 * fold :] = x[:, :, 2 * fold :]
    return out


def _unshift_arrays(g: np.ndarray, fold: int) -> np.ndarray:
    out = np.zeros_like(g)
    out[:, 1:, :fold] = g[:, :-1, :fold]
    out[:, :-1, fold : 2 * fold] = g[:, 1:, fold : 2 * fold]
    out[:, :, 2 * fold :] = g[:, :, 2 * fold :]
    return out


def temporal_shift(x: Tensor, cfg: ShiftConfig) -> Tensor:
    """Shift channel folds along the frame axis of a (B, T, C, H, W) clip."""
    if x.ndim != 5:
        raise ValidationError(f"temporal_shift needs a (B, T, C, H, W) input, got {x.shape}")
    c = x.shape[2]
    if c < cfg.divisions:
        raise ValidationError(
            f"channel extent {c} smaller than shift divisions {cfg.divisions}"
        )
    fold = c // cfg.divisions
    out = Tensor._wrap(_shift_arrays(x.data, fold))

    def pull(g: np.ndarray) -> None:
        _accumulate(x, _unshift_arrays(g, fold))

    _record((x,), out, pull)
    return out
