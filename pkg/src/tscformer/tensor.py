"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value in the package flows through `Tensor`: clips, feature maps,
attention tokens, logits. Operations record a pull-back closure on the
thread-local `GradTape`; `backward(loss)` replays the tape in reverse
execution order exactly once and accumulates gradients on every
`requires_grad` leaf. All storage is row-major float64 (numpy); 32-bit
would be too noisy for the finite-difference tolerances this package is
verified against.

Tensors are treated as immutable once created. A tape belongs to one
training step on one thread; `backward` consumes and clears it.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, ValidationError

__all__ = [
    "Tensor",
    "Parameter",
    "GradTape",
    "no_grad",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "relu",
    "matmul",
    "linear",
    "conv2d",
    "maxpool2d",
    "global_avgpool",
    "softmax",
    "batchnorm2d",
    "BatchNormState",
    "layernorm",
    "concat",
    "narrow",
    "reshape",
    "transpose",
    "repeat_new_axis",
    "tensor_sum",
    "tensor_mean",
    "cross_entropy",
]


# ---------------------------------------------------------------------------
# tape machinery


class GradTape:
    """Ordered record of executed operations.

    Each record pairs the op's output tensor with a pull closure that
    propagates the output gradient into the op's inputs. Replaying the
    records in reverse execution order visits every op exactly once;
    execution order is topological, so by the time a record is reached all
    of its output's consumers have already contributed their gradients.
    """

    __slots__ = ("records",)

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


_state = threading.local()


def active_tape() -> GradTape | None:
    """The tape currently recording on this thread, or None inside no_grad."""
    if getattr(_state, "off", 0):
        return None
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = GradTape()
    return tape


class no_grad:
    """Context manager that suspends tape recording on this thread."""

    def __enter__(self) -> "no_grad":
        _state.off = getattr(_state, "off", 0) + 1
        return self

    def __exit__(self, *exc) -> None:
        _state.off -= 1


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise ValidationError(f"tensor extents must all be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("tensor data must be finite (no NaN/Inf)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Internal fast path for op results: skips user-input validation."""
        t = object.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t._grad = None
        return t

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros for leaves the graph never touched."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axes, keepdims)

    def backward(self) -> None:
        backward(self)


class Parameter:
    """Named, trainable tensor. The value is rebound (never mutated) by the
    optimizer; gradients reset to zeros between steps via zero_grad()."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, data, requires_grad: bool = True):
        self.name = name
        self.value = Tensor(data, requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    assert g.shape == t.data.shape, f"gradient shape {g.shape} != tensor shape {t.data.shape}"
    if t._grad is None:
        t._grad = np.array(g, dtype=np.float64)
    else:
        t._grad = t._grad + g


def _record(inputs: tuple[Tensor, ...], out: Tensor, pull: Callable[[np.ndarray], None]) -> None:
    tape = active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.records.append((out, pull))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes numpy broadcasting expanded, back to `shape`."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-replay the active tape from `loss`, accumulating gradients on
    every requires_grad tensor. Consumes (clears) the tape."""
    if loss.ndim != 0:
        raise ValidationError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if tape is None:
        raise ValidationError("backward() called inside no_grad()")
    loss._grad = np.ones((), dtype=np.float64)
    try:
        for out, pull in reversed(tape.records):
            if out._grad is not None:
                pull(out._grad)
    finally:
        tape.clear()


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data + b.data)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    _record((a, b), out, pull)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data - b.data)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    _record((a, b), out, pull)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data * b.data)

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    _record((a, b), out, pull)
    return out


def neg(x: Tensor) -> Tensor:
    out = Tensor._wrap(-x.data)

    def pull(g: np.ndarray) -> None:
        _accumulate(x, -g)

    _record((x,), out, pull)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor._wrap(x.data * s)

    def pull(g: np.ndarray) -> None:
        _accumulate(x, g * s)

    _record((x,), out, pull)
    return out


def _relu_input_grad(g: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # Module-level so fault-injection tests can monkeypatch the rule.
    return g * mask


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = Tensor._wrap(np.where(mask, x.data, 0.0))

    def pull(g: np.ndarray) -> None:
        _accumulate(x, _relu_input_grad(g, mask))

    _record((x,), out, pull)
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size and -1 not in shape:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    out = Tensor._wrap(x.data.reshape(shape))

    def pull(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.data.shape))

    _record((x,), out, pull)
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    out = Tensor._wrap(x.data.transpose(axes))

    def pull(g: np.ndarray) -> None:
        _accumulate(x, g.transpose(inverse))

    _record((x,), out, pull)
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` extents starting at `start` along `axis`."""
    axis = _normalize_axis(axis, x.ndim)
    if start < 0 or length < 1 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of shape {x.shape}"
        )
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor._wrap(x.data[index].copy())

    def pull(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gx[index] = g
        _accumulate(x, gx)

    _record((x,), out, pull)
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValidationError("concat needs at least one tensor")
    axis = _normalize_axis(axis, tensors[0].ndim)
    reference = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(reference) or any(
            o != r for i, (o, r) in enumerate(zip(other, reference)) if i != axis
        ):
            raise DimensionError(
                f"concat shapes incompatible off axis {axis}: {tensors[0].shape} vs {t.shape}"
            )
    out = Tensor._wrap(np.concatenate([t.data for t in tensors], axis=axis))
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def pull(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                _accumulate(t, g[tuple(index)])

    _record(tuple(tensors), out, pull)
    return out


def repeat_new_axis(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of extent n by tiling x; gradient sums over it."""
    if n < 1:
        raise ValidationError(f"repeat count must be >= 1, got {n}")
    expanded = np.expand_dims(x.data, axis)
    shape = list(expanded.shape)
    shape[axis] = n
    out = Tensor._wrap(np.broadcast_to(expanded, shape).copy())

    def pull(g: np.ndarray) -> None:
        _accumulate(x, g.sum(axis=axis))

    _record((x,), out, pull)
    return out


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def _reduce_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(_normalize_axis(a, ndim) for a in axes))


def tensor_sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _reduce_axes(axes, x.ndim)
    out = Tensor._wrap(x.data.sum(axis=axes, keepdims=keepdims))

    def pull(g: np.ndarray) -> None:
        gk = g if keepdims else np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(gk, x.data.shape))

    _record((x,), out, pull)
    return out


def tensor_mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _reduce_axes(axes, x.ndim)
    count = float(np.prod([x.shape[a] for a in axes])) if axes else 1.0
    out = Tensor._wrap(x.data.mean(axis=axes, keepdims=keepdims))

    def pull(g: np.ndarray) -> None:
        gk = g if keepdims else np.expand_dims(g, axes)
        _accumulate(x, np.broadcast_to(gk / count, x.data.shape).copy())

    _record((x,), out, pull)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor._wrap(np.matmul(a.data, b.data))

    def pull(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    _record((a, b), out, pull)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map x @ w + b over the trailing extent of x."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear extents differ: input {x.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    y = matmul(flat, w)
    if b is not None:
        y = add(y, b)
    if x.ndim != 2:
        y = reshape(y, lead + (w.shape[1],))
    return y


# ---------------------------------------------------------------------------
# convolution and pooling


def _conv_out_extent(extent: int, k: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW layout."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d needs 4-D input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    batch, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp} (input {x.shape}, pad {pad})"
        )
    ho, wo = _conv_out_extent(h, kh, stride, pad), _conv_out_extent(wd, kw, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, Ho, Wo, kh, kw) -> (B, Ho*Wo, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(batch, ho * wo, cin * kh * kw)
    wm = w.data.reshape(cout, cin * kh * kw)
    y = (cols @ wm.T).transpose(0, 2, 1).reshape(batch, cout, ho, wo)
    if b is not None:
        if b.shape != (cout,):
            raise DimensionError(f"conv2d bias shape {b.shape} != ({cout},)")
        y = y + b.data.reshape(1, cout, 1, 1)
    out = Tensor._wrap(y)

    def pull(g: np.ndarray) -> None:
        gm = g.transpose(0, 2, 3, 1).reshape(batch, ho * wo, cout)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            gw = np.einsum("bno,bnk->ok", gm, cols)
            _accumulate(w, gw.reshape(w.data.shape))
        if x.requires_grad:
            gcols = (gm @ wm).reshape(batch, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((batch, cin, hp, wp), dtype=np.float64)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ]
            _accumulate(x, gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp)

    inputs = (x, w) if b is None else (x, w, b)
    _record(inputs, out, pull)
    return out


def maxpool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    """Per-window maximum; gradient routes to the first row-major argmax."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d needs a 4-D input, got {x.shape}")
    batch, c, h, wd = x.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    if k > hp or k > wp:
        raise DimensionError(f"pool window {k} larger than padded extent {hp}x{wp}")
    ho, wo = _conv_out_extent(h, k, stride, pad), _conv_out_extent(wd, k, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(batch, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = Tensor._wrap(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0].copy())

    def pull(g: np.ndarray) -> None:
        di, dj = np.divmod(arg, k)
        bi, ci, oi, oj = np.indices(arg.shape, sparse=False)
        rows, cols_ = oi * stride + di, oj * stride + dj
        gxp = np.zeros((batch, c, hp, wp), dtype=np.float64)
        np.add.at(gxp, (bi, ci, rows, cols_), g)
        _accumulate(x, gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp)

    _record((x,), out, pull)
    return out


def global_avgpool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avgpool needs a 4-D input, got {x.shape}")
    return tensor_mean(x, axes=(2, 3))


# ---------------------------------------------------------------------------
# normalization


class BatchNormState:
    """Running statistics for one batchnorm2d site. Uninitialized until the
    first train-mode call; eval mode before that is an error."""

    __slots__ = ("running_mean", "running_var", "batches_tracked")

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.batches_tracked = 0

    @property
    def initialized(self) -> bool:
        return self.batches_tracked > 0


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    train: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over the (merged) batch and spatial axes.

    Train mode normalizes with the current batch statistics (biased
    variance) and folds them into the running stats: the first batch seeds
    them, later batches blend as momentum*old + (1-momentum)*new.
    """
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d needs a 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batchnorm2d affine shapes {gamma.shape}/{beta.shape} != ({c},) for input {x.shape}"
        )
    if train:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if state.batches_tracked == 0:
            state.running_mean = mean.copy()
            state.running_var = var.copy()
        else:
            state.running_mean = momentum * state.running_mean + (1.0 - momentum) * mean
            state.running_var = momentum * state.running_var + (1.0 - momentum) * var
        state.batches_tracked += 1
    else:
        if not state.initialized:
            raise ValidationError("batchnorm2d eval mode before any train-mode call")
        mean, var = state.running_mean, state.running_var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = Tensor._wrap(gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1))

    def pull(g: np.ndarray) -> None:
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gi = gamma.data.reshape(1, c, 1, 1) * inv.reshape(1, c, 1, 1)
            if train:
                gm = g.mean(axis=(0, 2, 3), keepdims=True)
                gxm = (g * xhat).mean(axis=(0, 2, 3), keepdims=True)
                _accumulate(x, gi * (g - gm - xhat * gxm))
            else:
                _accumulate(x, gi * g)

    _record((x, gamma, beta), out, pull)
    return out


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing extent with learnable affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layernorm affine shapes {gamma.shape}/{beta.shape} != ({d},) for input {x.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = Tensor._wrap(gamma.data * xhat + beta.data)

    def pull(g: np.ndarray) -> None:
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gg = g * gamma.data
            gm = gg.mean(axis=-1, keepdims=True)
            gxm = (gg * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gg - gm - xhat * gxm))

    _record((x, gamma, beta), out, pull)
    return out


# ---------------------------------------------------------------------------
# softmax and loss


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-subtracted exponential normalization along `axis`."""
    axis = _normalize_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(y)

    def pull(g: np.ndarray) -> None:
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    _record((x,), out, pull)
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy needs (B, K) logits, got {logits.shape}")
    t = np.asarray(targets)
    if t.shape != (logits.shape[0],):
        raise ValidationError(
            f"cross_entropy targets shape {t.shape} != ({logits.shape[0]},)"
        )
    if not np.issubdtype(t.dtype, np.integer):
        raise ValidationError("cross_entropy targets must be integer class indices")
    k = logits.shape[1]
    if t.min() < 0 or t.max() >= k:
        raise ValidationError(f"cross_entropy label out of range [0, {k})")
    batch = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    losses = (lse[:, 0] - z[np.arange(batch), t])
    out = Tensor._wrap(np.asarray(losses.mean()))

    def pull(g: np.ndarray) -> None:
        probs = np.exp(z - lse)
        probs[np.arange(batch), t] -= 1.0
        _accumulate(logits, probs * (float(g) / batch))

    _record((logits,), out, pull)
    return out


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must be scalar-valued and finite near x. The relative error per
    coordinate uses max(|analytic|, |numeric|, 1e-8) as denominator.
    Consumes the active tape.
    """
    base = Tensor(x.data.copy(), requires_grad=True)
    y = f(base)
    if y.ndim != 0:
        raise ValidationError(f"grad_check needs a scalar-valued f, got shape {y.shape}")
    if not np.isfinite(y.item()):
        raise NumericError("grad_check: f(x) is not finite")
    backward(y)
    analytic = base.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            probes = []
            for sign in (1.0, -1.0):
                pert = flat.copy()
                pert[i] += sign * eps
                out = f(Tensor._wrap(pert.reshape(x.data.shape)))
                val = float(out.data.reshape(()))
                if not math.isfinite(val):
                    raise NumericError(f"grad_check: non-finite output at coordinate {i}")
                probes.append(val)
            numeric[i] = (probes[0] - probes[1]) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_sampled(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    max_coords: int = 16,
    seed: int = 0,
) -> float:
    """grad_check restricted to a deterministic sample of coordinates.

    Used where exhaustive per-coordinate differencing would be too slow
    (e.g. the CLI gradient report); the acceptance suite runs the
    exhaustive version.
    """
    base = Tensor(x.data.copy(), requires_grad=True)
    y = f(base)
    if y.ndim != 0:
        raise ValidationError(f"grad_check needs a scalar-valued f, got shape {y.shape}")
    backward(y)
    analytic = base.grad.reshape(-1)

    total = x.size
    if max_coords <= 0 or max_coords >= total:
        coords = np.arange(total)
    else:
        coords = np.random.default_rng(seed).choice(total, size=max_coords, replace=False)
        coords.sort()
    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in coords:
            probes = []
            for sign in (1.0, -1.0):
                pert = flat.copy()
                pert[i] += sign * eps
                out = f(Tensor._wrap(pert.reshape(x.data.shape)))
                val = float(out.data.reshape(()))
                if not math.isfinite(val):
                    raise NumericError(f"grad_check: non-finite output at coordinate {i}")
                probes.append(val)
            numeric = (probes[0] - probes[1]) / (2.0 * eps)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
