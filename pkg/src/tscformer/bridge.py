"""Global-token bridge: cross-attention from learned tokens into the
concatenated two-branch CNN features, then self-attention and a
feed-forward refinement.

The tokens act as queries; the channel-concatenated RGB/event feature
maps are projected once by a 1x1 convolution and flattened into the
key/value token axis. Attention logits are scaled by 1/sqrt(D) with D
the full token dimension. Self-attention and the feed-forward block use
pre-norm residual wiring; the cross-attention stage follows the plain
Softmax(QK^T/sqrt(D))V form with an output projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import Conv2d, LayerNorm, Linear
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    linear,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)

__all__ = [
    "BridgeConfig",
    "GlobalTokens",
    "features_to_kv",
    "cross_attention",
    "SelfAttentionBlock",
    "FeedForwardBlock",
    "BridgeBlock",
]


@dataclass(frozen=True)
class BridgeConfig:
    depth: int = 1
    heads: int = 4
    ffn_expansion: int = 4
    insertion_blocks: tuple[int, ...] = (1, 2, 3, 4)
    use_bridge: bool = True  # cross-attention stage
    use_former: bool = True  # self-attention + feed-forward stages
    positional_encoding: str = "none"

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"bridge depth must be >= 1, got {self.depth}")
        if self.heads < 1:
            raise ConfigError(f"head count must be >= 1, got {self.heads}")
        if self.ffn_expansion < 1:
            raise ConfigError(f"ffn expansion must be >= 1, got {self.ffn_expansion}")
        if any(b not in (1, 2, 3, 4) for b in self.insertion_blocks):
            raise ConfigError(f"insertion blocks must be within 1..4, got {self.insertion_blocks}")
        if len(set(self.insertion_blocks)) != len(self.insertion_blocks):
            raise ConfigError(f"duplicate insertion blocks in {self.insertion_blocks}")
        if self.positional_encoding != "none":
            raise ConfigError(
                f"positional encoding {self.positional_encoding!r} unsupported (only 'none')"
            )


@dataclass
class GlobalTokens:
    """Learned token set, replicated over the batch at forward time."""

    count: int = 3
    dim: int = 64
    init_std: float = 0.02

    def make_parameter(self, name: str, rng: np.random.Generator) -> Parameter:
        return Parameter(name, rng.normal(0.0, self.init_std, size=(self.count, self.dim)))


def features_to_kv(feat_rgb: Tensor, feat_evt: Tensor, proj: Conv2d) -> Tensor:
    """Concatenate both modalities on channels, project with a 1x1 conv, and
    flatten (T, H, W) into the key/value token axis: -> (B, T*H*W, D)."""
    if feat_rgb.shape != feat_evt.shape:
        raise DimensionError(
            f"modality feature shapes differ: {feat_rgb.shape} vs {feat_evt.shape}"
        )
    b, t, c, h, w = feat_rgb.shape
    stacked = concat([feat_rgb, feat_evt], axis=2)  # (B, T, 2C, H, W)
    merged = reshape(stacked, (b * t, 2 * c, h, w))
    projected = proj(merged)  # (B*T, D, H, W)
    d = projected.shape[1]
    tokens = reshape(projected, (b, t, d, h * w))
    tokens = transpose(tokens, (0, 1, 3, 2))  # (B, T, H*W, D)
    return reshape(tokens, (b, t * h * w, d))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    x = reshape(x, (b, n, heads, d // heads))
    return transpose(x, (0, 2, 1, 3))  # (B, heads, N, dh)


def _merge_heads(x: Tensor) -> Tensor:
    b, heads, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, heads * dh))


def _attention(q: Tensor, k: Tensor, v: Tensor, heads: int, scale: float) -> Tensor:
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    logits = matmul(qh, transpose(kh, (0, 1, 3, 2))) * scale
    weights = softmax(logits, axis=-1)
    return _merge_heads(matmul(weights, vh))


def cross_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int = 1,
    w_out: Tensor | None = None,
    b_out: Tensor | None = None,
) -> Tensor:
    """Softmax(QK^T / sqrt(D)) V with optional output projection.

    Multi-head splitting uses head dimension D/heads; the logit scale stays
    1/sqrt(D) with D the full token dimension.
    """
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise DimensionError(
            f"attention operands must be (B, N, D), got {q.shape}, {k.shape}, {v.shape}"
        )
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError(
            f"token dimensions differ: Q {q.shape}, K {k.shape}, V {v.shape}"
        )
    if k.shape[:2] != v.shape[:2]:
        raise DimensionError(f"K {k.shape} and V {v.shape} must align")
    if d % heads != 0:
        raise ConfigError(f"token dim {d} not divisible by {heads} heads")
    out = _attention(q, k, v, heads, 1.0 / math.sqrt(d))
    if w_out is not None:
        out = linear(out, w_out, b_out)
    return out


class SelfAttentionBlock:
    """Pre-norm residual multi-head self-attention over the token axis."""

    def __init__(self, name: str, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ConfigError(f"token dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.dim = dim
        self.norm = LayerNorm(f"{name}.norm", dim)
        self.wq = Linear(f"{name}.wq", dim, dim, rng=rng)
        # no key bias: softmax is invariant to a uniform logit shift, so a
        # key bias would be an exactly-dead parameter direction
        self.wk = Linear(f"{name}.wk", dim, dim, bias=False, rng=rng)
        self.wv = Linear(f"{name}.wv", dim, dim, rng=rng)
        self.wo = Linear(f"{name}.wo", dim, dim, rng=rng)

    def __call__(self, tokens: Tensor) -> Tensor:
        normed = self.norm(tokens)
        attended = _attention(
            self.wq(normed), self.wk(normed), self.wv(normed), self.heads, 1.0 / math.sqrt(self.dim)
        )
        return add(tokens, self.wo(attended))

    def params(self) -> list[Parameter]:
        return (
            self.norm.params()
            + self.wq.params()
            + self.wk.params()
            + self.wv.params()
            + self.wo.params()
        )


class FeedForwardBlock:
    """Pre-norm residual per-token MLP: D -> expansion*D -> D."""

    def __init__(self, name: str, dim: int, expansion: int, rng: np.random.Generator):
        self.norm = LayerNorm(f"{name}.norm", dim)
        self.w1 = Linear(f"{name}.w1", dim, expansion * dim, rng=rng)
        self.w2 = Linear(f"{name}.w2", expansion * dim, dim, rng=rng)

    def __call__(self, tokens: Tensor) -> Tensor:
        return add(tokens, self.w2(relu(self.w1(self.norm(tokens)))))

    def params(self) -> list[Parameter]:
        return self.norm.params() + self.w1.params() + self.w2.params()


class _BridgeUnit:
    """One depth unit: cross-attention, then self-attention + feed-forward."""

    def __init__(self, name: str, dim: int, cfg: BridgeConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.dim = dim
        if cfg.use_bridge:
            self.cross_out = Linear(f"{name}.cross_out", dim, dim, rng=rng)
        if cfg.use_former:
            self.attn = SelfAttentionBlock(f"{name}.attn", dim, cfg.heads, rng)
            self.ffn = FeedForwardBlock(f"{name}.ffn", dim, cfg.ffn_expansion, rng)

    def __call__(self, tokens: Tensor, kv: Tensor | None) -> Tensor:
        if self.cfg.use_bridge:
            assert kv is not None
            tokens = cross_attention(
                tokens,
                kv,
                kv,
                heads=self.cfg.heads,
                w_out=self.cross_out.w.value,
                b_out=self.cross_out.b.value,
            )
        if self.cfg.use_former:
            tokens = self.attn(tokens)
            tokens = self.ffn(tokens)
        return tokens

    def params(self) -> list[Parameter]:
        out = []
        if self.cfg.use_bridge:
            out += self.cross_out.params()
        if self.cfg.use_former:
            out += self.attn.params() + self.ffn.params()
        return out


class BridgeBlock:
    """The full bridge at one insertion point: a key/value projection for
    the concatenated features plus `depth` stacked units."""

    def __init__(
        self, name: str, feat_channels: int, dim: int, cfg: BridgeConfig, rng: np.random.Generator
    ):
        self.cfg = cfg
        self.kv = Conv2d(f"{name}.kv", 2 * feat_channels, dim, 1, rng=rng) if cfg.use_bridge else None
        self.units = [_BridgeUnit(f"{name}.unit{j + 1}", dim, cfg, rng) for j in range(cfg.depth)]

    def __call__(self, tokens: Tensor, feat_rgb: Tensor, feat_evt: Tensor) -> Tensor:
        kv = features_to_kv(feat_rgb, feat_evt, self.kv) if self.kv is not None else None
        for unit in self.units:
            tokens = unit(tokens, kv)
        return tokens

    def params(self) -> list[Parameter]:
        out = self.kv.params() if self.kv is not None else []
        for unit in self.units:
            out += unit.params()
        return out
