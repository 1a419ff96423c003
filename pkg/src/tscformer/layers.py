"""Thin parameter-owning wrappers over the functional tensor ops.

Each layer creates its Parameters with fully-qualified names at
construction time, so the model can collect a flat, deterministic
parameter list for the optimizer and checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    BatchNormState,
    Parameter,
    Tensor,
    batchnorm2d,
    conv2d,
    layernorm,
    linear,
)


class Conv2d:
    def __init__(
        self,
        name: str,
        cin: int,
        cout: int,
        k: int,
        *,
        stride: int = 1,
        pad: int = 0,
        bias: bool = True,
        rng: np.random.Generator,
    ):
        std = math.sqrt(2.0 / (cin * k * k))
        self.w = Parameter(f"{name}.w", rng.normal(0.0, std, size=(cout, cin, k, k)))
        self.b = Parameter(f"{name}.b", np.zeros(cout)) if bias else None
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        b = self.b.value if self.b is not None else None
        return conv2d(x, self.w.value, b, stride=self.stride, pad=self.pad)

    def params(self) -> list[Parameter]:
        return [self.w] + ([self.b] if self.b is not None else [])


class BatchNorm2d:
    def __init__(self, name: str, channels: int, momentum: float = 0.9):
        self.name = name
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels))
        self.state = BatchNormState(channels)
        self.momentum = momentum

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return batchnorm2d(
            x, self.gamma.value, self.beta.value, self.state, train, momentum=self.momentum
        )

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{self.name}.running_mean", self.state.running_mean),
            (f"{self.name}.running_var", self.state.running_var),
            (f"{self.name}.batches_tracked", np.asarray(float(self.state.batches_tracked))),
        ]

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        self.state.running_mean = values[f"{self.name}.running_mean"].copy()
        self.state.running_var = values[f"{self.name}.running_var"].copy()
        self.state.batches_tracked = int(values[f"{self.name}.batches_tracked"])


class Linear:
    def __init__(
        self,
        name: str,
        fin: int,
        fout: int,
        *,
        bias: bool = True,
        init_std: float | None = None,
        rng: np.random.Generator,
    ):
        std = math.sqrt(2.0 / fin) if init_std is None else init_std
        self.w = Parameter(f"{name}.w", rng.normal(0.0, std, size=(fin, fout)))
        self.b = Parameter(f"{name}.b", np.zeros(fout)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w.value, self.b.value if self.b is not None else None)

    def params(self) -> list[Parameter]:
        return [self.w] + ([self.b] if self.b is not None else [])


class LayerNorm:
    def __init__(self, name: str, dim: int):
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gamma.value, self.beta.value)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]
