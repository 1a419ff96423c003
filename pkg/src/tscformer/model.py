"""The assembled two-branch recognizer.

Dual stems embed RGB and event clips, four temporal-shift bottleneck
stages per modality extract local features, and at each configured
insertion point the global tokens query both branches through the bridge
and get injected back via per-modality projection + 1x1 fusion. The head
pools space, averages frames, concatenates both branch vectors with the
flattened tokens, and applies a single linear classifier.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bridge import BridgeBlock, BridgeConfig, GlobalTokens
from .errors import ConfigError, DimensionError, ValidationError
from .fusion import FusionConfig, TokensToMap, fuse
from .layers import BatchNorm2d, Conv2d, Linear
from .shift import ShiftConfig, temporal_shift
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    cross_entropy,
    global_avgpool,
    maxpool2d,
    relu,
    repeat_new_axis,
    reshape,
    tensor_mean,
)
from .tnsr import dump_tensor, load_tensor

__all__ = ["TscFormerConfig", "TscFormer", "Stem", "Bottleneck", "ResidualStage"]


@dataclass(frozen=True)
class TscFormerConfig:
    num_classes: int
    frames: int = 8
    height: int = 224
    width: int = 224
    channels: tuple[int, ...] = (8, 16, 32, 64)
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    token_count: int = 3
    token_dim: int = 64
    use_shift: bool = True
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if len(self.channels) != 4 or len(self.blocks) != 4:
            raise ConfigError(
                f"need 4 stage channels and block counts, got {self.channels} / {self.blocks}"
            )
        if any(c < 1 for c in self.channels) or any(b < 1 for b in self.blocks):
            raise ConfigError(f"stage plan entries must be >= 1: {self.channels} / {self.blocks}")
        if self.height % 4 or self.width % 4:
            raise ConfigError(
                f"input extents {self.height}x{self.width} must be divisible by 4"
            )
        if self.token_count < 1 or self.token_dim < 1:
            raise ConfigError(
                f"token plan {self.token_count}x{self.token_dim} must be positive"
            )
        if self.token_dim % self.bridge.heads:
            raise ConfigError(
                f"token dim {self.token_dim} not divisible by {self.bridge.heads} heads"
            )
        if self.use_shift:
            for cin in self.stage_inputs():
                if cin < self.shift.divisions:
                    raise ConfigError(
                        f"stage input width {cin} below shift divisions {self.shift.divisions}"
                    )

    def stage_inputs(self) -> tuple[int, ...]:
        """Channel width entering each of the four stages."""
        return (self.channels[0], self.channels[0], self.channels[1], self.channels[2])

    def stage_spatial(self) -> list[tuple[int, int]]:
        """(H, W) of each stage's output feature map."""
        h, w = self.height // 4, self.width // 4
        dims = []
        for i in range(4):
            if i > 0:  # stages 2..4 stride 2
                h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
            dims.append((h, w))
        return dims

    @property
    def uses_tokens(self) -> bool:
        return len(self.bridge.insertion_blocks) > 0

    # -- flat text form (checkpoints, run configs) ---------------------------

    def to_kv(self) -> dict[str, str]:
        def seq(vals):
            return ",".join(str(v) for v in vals) if vals else "none"

        return {
            "num_classes": str(self.num_classes),
            "frames": str(self.frames),
            "height": str(self.height),
            "width": str(self.width),
            "channels": seq(self.channels),
            "blocks": seq(self.blocks),
            "token_count": str(self.token_count),
            "token_dim": str(self.token_dim),
            "use_shift": str(self.use_shift).lower(),
            "shift_divisions": str(self.shift.divisions),
            "bridge_depth": str(self.bridge.depth),
            "heads": str(self.bridge.heads),
            "ffn_expansion": str(self.bridge.ffn_expansion),
            "insertion_blocks": seq(self.bridge.insertion_blocks),
            "use_bridge": str(self.bridge.use_bridge).lower(),
            "use_former": str(self.bridge.use_former).lower(),
            "positional_encoding": self.bridge.positional_encoding,
            "fusion_mode": self.fusion.mode,
        }

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TscFormerConfig":
        def ints(value):
            return () if value == "none" else tuple(int(v) for v in value.split(","))

        def boolean(value):
            if value not in ("true", "false"):
                raise ConfigError(f"expected true/false, got {value!r}")
            return value == "true"

        try:
            return cls(
                num_classes=int(kv["num_classes"]),
                frames=int(kv["frames"]),
                height=int(kv["height"]),
                width=int(kv["width"]),
                channels=ints(kv["channels"]),
                blocks=ints(kv["blocks"]),
                token_count=int(kv["token_count"]),
                token_dim=int(kv["token_dim"]),
                use_shift=boolean(kv["use_shift"]),
                shift=ShiftConfig(divisions=int(kv["shift_divisions"])),
                bridge=BridgeConfig(
                    depth=int(kv["bridge_depth"]),
                    heads=int(kv["heads"]),
                    ffn_expansion=int(kv["ffn_expansion"]),
                    insertion_blocks=ints(kv["insertion_blocks"]),
                    use_bridge=boolean(kv["use_bridge"]),
                    use_former=boolean(kv["use_former"]),
                    positional_encoding=kv["positional_encoding"],
                ),
                fusion=FusionConfig(mode=kv["fusion_mode"]),
            )
        except KeyError as missing:
            raise ConfigError(f"model config missing key {missing.args[0]!r}") from None

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_kv().items())

    @classmethod
    def from_text(cls, text: str) -> "TscFormerConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        return cls.from_kv(kv)


class Stem:
    """7x7 stride-2 convolution, batchnorm, relu, 3x3 stride-2 max pool."""

    def __init__(self, name: str, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(f"{name}.conv", 3, cout, 7, stride=2, pad=3, bias=False, rng=rng)
        self.bn = BatchNorm2d(f"{name}.bn", cout)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        y = relu(self.bn(self.conv(x), train))
        return maxpool2d(y, k=3, stride=2, pad=1)

    def params(self) -> list[Parameter]:
        return self.conv.params() + self.bn.params()

    def bns(self) -> list[BatchNorm2d]:
        return [self.bn]


class Bottleneck:
    """1x1 reduce -> 3x3 (optionally strided) -> 1x1 expand, with shortcut."""

    def __init__(self, name: str, cin: int, cout: int, stride: int, rng: np.random.Generator):
        # reduction floor of 2: a single-channel mid would make its bn gamma a
        # pure scale that the next (scale-invariant) batchnorm cancels exactly
        mid = max(2, cout // 4)
        self.conv1 = Conv2d(f"{name}.conv1", cin, mid, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(f"{name}.bn1", mid)
        self.conv2 = Conv2d(f"{name}.conv2", mid, mid, 3, stride=stride, pad=1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(f"{name}.bn2", mid)
        self.conv3 = Conv2d(f"{name}.conv3", mid, cout, 1, bias=False, rng=rng)
        self.bn3 = BatchNorm2d(f"{name}.bn3", cout)
        if cin != cout or stride != 1:
            self.shortcut_conv = Conv2d(
                f"{name}.shortcut.conv", cin, cout, 1, stride=stride, bias=False, rng=rng
            )
            self.shortcut_bn = BatchNorm2d(f"{name}.shortcut.bn", cout)
        else:
            self.shortcut_conv = None
            self.shortcut_bn = None

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if self.shortcut_conv is not None:
            identity = self.shortcut_bn(self.shortcut_conv(x), train)
        else:
            identity = x
        y = relu(self.bn1(self.conv1(x), train))
        y = relu(self.bn2(self.conv2(y), train))
        y = self.bn3(self.conv3(y), train)
        return relu(add(y, identity))

    def params(self) -> list[Parameter]:
        out = (
            self.conv1.params() + self.bn1.params()
            + self.conv2.params() + self.bn2.params()
            + self.conv3.params() + self.bn3.params()
        )
        if self.shortcut_conv is not None:
            out += self.shortcut_conv.params() + self.shortcut_bn.params()
        return out

    def bns(self) -> list[BatchNorm2d]:
        out = [self.bn1, self.bn2, self.bn3]
        if self.shortcut_bn is not None:
            out.append(self.shortcut_bn)
        return out


class ResidualStage:
    """Temporal shift at the stage entrance, then the bottleneck unit(s)."""

    def __init__(
        self,
        name: str,
        cin: int,
        cout: int,
        stride: int,
        blocks: int,
        use_shift: bool,
        shift_cfg: ShiftConfig,
        rng: np.random.Generator,
    ):
        self.use_shift = use_shift
        self.shift_cfg = shift_cfg
        self.units = [
            Bottleneck(f"{name}.block{j + 1}", cin if j == 0 else cout, cout,
                       stride if j == 0 else 1, rng)
            for j in range(blocks)
        ]

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if self.use_shift:
            x = temporal_shift(x, self.shift_cfg)
        b, t, c, h, w = x.shape
        y = reshape(x, (b * t, c, h, w))
        for unit in self.units:
            y = unit(y, train)
        _, cout, ho, wo = y.shape
        return reshape(y, (b, t, cout, ho, wo))

    def params(self) -> list[Parameter]:
        out = []
        for unit in self.units:
            out += unit.params()
        return out

    def bns(self) -> list[BatchNorm2d]:
        out = []
        for unit in self.units:
            out += unit.bns()
        return out


class TscFormer:
    def __init__(self, config: TscFormerConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        cfg = config

        self.stem_rgb = Stem("stem_rgb", cfg.channels[0], rng)
        self.stem_evt = Stem("stem_evt", cfg.channels[0], rng)

        inputs = cfg.stage_inputs()
        self.stages_rgb: list[ResidualStage] = []
        self.stages_evt: list[ResidualStage] = []
        self.bridges: dict[int, BridgeBlock] = {}
        self.inject_rgb: dict[int, TokensToMap] = {}
        self.inject_evt: dict[int, TokensToMap] = {}
        self.fuse_rgb: dict[int, Conv2d] = {}
        self.fuse_evt: dict[int, Conv2d] = {}

        spatial = cfg.stage_spatial()
        for i in range(1, 5):
            cin, cout = inputs[i - 1], cfg.channels[i - 1]
            stride = 1 if i == 1 else 2
            self.stages_rgb.append(
                ResidualStage(f"rgb_stage{i}", cin, cout, stride, cfg.blocks[i - 1],
                              cfg.use_shift, cfg.shift, rng)
            )
            self.stages_evt.append(
                ResidualStage(f"evt_stage{i}", cin, cout, stride, cfg.blocks[i - 1],
                              cfg.use_shift, cfg.shift, rng)
            )
            if i in cfg.bridge.insertion_blocks:
                h, w = spatial[i - 1]
                self.bridges[i] = BridgeBlock(
                    f"bridge{i}", cout, cfg.token_dim, cfg.bridge, rng
                )
                # injected maps use the stage width so concat/add fusion both
                # apply and swapping modes only changes the 1x1 fusion convs
                target = (cout, h, w)
                self.inject_rgb[i] = TokensToMap(
                    f"inject_rgb{i}", cfg.token_count, cfg.token_dim, target, rng
                )
                self.inject_evt[i] = TokensToMap(
                    f"inject_evt{i}", cfg.token_count, cfg.token_dim, target, rng
                )
                fuse_in = 2 * cout if cfg.fusion.mode == "concat" else cout
                # bias-free like every conv that feeds a batchnorm stage: a
                # constant channel shift would be cancelled by normalization
                self.fuse_rgb[i] = Conv2d(f"fuse_rgb{i}", fuse_in, cout, 1, bias=False, rng=rng)
                self.fuse_evt[i] = Conv2d(f"fuse_evt{i}", fuse_in, cout, 1, bias=False, rng=rng)

        self.tokens: Parameter | None = None
        if cfg.uses_tokens:
            tokens = GlobalTokens(cfg.token_count, cfg.token_dim)
            self.tokens = tokens.make_parameter("tokens", rng)

        head_in = 2 * cfg.channels[3]
        if cfg.uses_tokens:
            head_in += cfg.token_count * cfg.token_dim
        # small classifier init keeps the softmax unsaturated at step 0
        self.classifier = Linear("classifier", head_in, cfg.num_classes, init_std=0.01, rng=rng)

    # -- forward --------------------------------------------------------------

    def forward(
        self,
        rgb: Tensor,
        evt: Tensor,
        train: bool = False,
        capture: dict | None = None,
    ) -> Tensor:
        cfg = self.config
        if rgb.shape != evt.shape:
            raise DimensionError(f"modality clips differ: {rgb.shape} vs {evt.shape}")
        if rgb.ndim != 5 or rgb.shape[2] != 3:
            raise DimensionError(f"expected (B, T, 3, H, W) clips, got {rgb.shape}")
        b, t, _, h, w = rgb.shape
        if (t, h, w) != (cfg.frames, cfg.height, cfg.width):
            raise DimensionError(
                f"clip extents {(t, h, w)} do not match config "
                f"{(cfg.frames, cfg.height, cfg.width)}"
            )

        fr = self._embed(self.stem_rgb, rgb, train)
        fe = self._embed(self.stem_evt, evt, train)
        z = repeat_new_axis(self.tokens.value, 0, b) if self.tokens is not None else None

        for i in range(1, 5):
            fr = self.stages_rgb[i - 1](fr, train)
            fe = self.stages_evt[i - 1](fe, train)
            if i in self.bridges:
                z = self.bridges[i](z, fr, fe)
                fr = fuse(fr, self.inject_rgb[i](z, t), self.fuse_rgb[i], cfg.fusion.mode)
                fe = fuse(fe, self.inject_evt[i](z, t), self.fuse_evt[i], cfg.fusion.mode)
            if capture is not None:
                capture[f"rgb_block{i}"] = fr.data.copy()
                capture[f"event_block{i}"] = fe.data.copy()
                if z is not None:
                    capture[f"tokens_block{i}"] = z.data.copy()

        parts = [self._pool(fr, b, t), self._pool(fe, b, t)]
        if z is not None:
            parts.append(reshape(z, (b, cfg.token_count * cfg.token_dim)))
        return self.classifier(concat(parts, axis=1))

    @staticmethod
    def _embed(stem: Stem, clip: Tensor, train: bool) -> Tensor:
        b, t, c, h, w = clip.shape
        y = stem(reshape(clip, (b * t, c, h, w)), train)
        _, cout, ho, wo = y.shape
        return reshape(y, (b, t, cout, ho, wo))

    @staticmethod
    def _pool(feat: Tensor, b: int, t: int) -> Tensor:
        _, _, c, h, w = feat.shape
        pooled = global_avgpool(reshape(feat, (b * t, c, h, w)))
        return tensor_mean(reshape(pooled, (b, t, c)), axes=(1,))

    def loss(self, logits: Tensor, labels) -> Tensor:
        return cross_entropy(logits, labels)

    # -- parameter bookkeeping --------------------------------------------------

    def named_parameters(self) -> list[Parameter]:
        out = self.stem_rgb.params() + self.stem_evt.params()
        for i in range(1, 5):
            out += self.stages_rgb[i - 1].params()
            out += self.stages_evt[i - 1].params()
            if i in self.bridges:
                out += self.bridges[i].params()
                out += self.inject_rgb[i].params() + self.inject_evt[i].params()
                out += self.fuse_rgb[i].params() + self.fuse_evt[i].params()
        if self.tokens is not None:
            out.append(self.tokens)
        out += self.classifier.params()
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters())

    def _bn_modules(self) -> list[BatchNorm2d]:
        out = self.stem_rgb.bns() + self.stem_evt.bns()
        for i in range(1, 5):
            out += self.stages_rgb[i - 1].bns() + self.stages_evt[i - 1].bns()
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for bn in self._bn_modules():
            out += bn.buffers()
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters():
            p.zero_grad()

    # -- checkpointing -----------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> None:
        """Archive of named TNSR1 entries plus the plain-text config block.

        Entries are stored sorted and uncompressed with a fixed timestamp so
        identical models produce byte-identical checkpoints.
        """
        entries: dict[str, bytes] = {"config.txt": self.config.to_text().encode()}
        for p in self.named_parameters():
            entries[f"params/{p.name}.tnsr"] = dump_tensor(p.value)
        for name, arr in self.named_buffers():
            entries[f"buffers/{name}.tnsr"] = dump_tensor(arr)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in sorted(entries):
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, entries[name])

    @classmethod
    def load_checkpoint(cls, path: str | Path) -> "TscFormer":
        with zipfile.ZipFile(path, "r") as zf:
            names = set(zf.namelist())
            if "config.txt" not in names:
                raise ValidationError("checkpoint missing config.txt")
            config = TscFormerConfig.from_text(zf.read("config.txt").decode())
            model = cls(config, seed=0)

            expected_params = {f"params/{p.name}.tnsr" for p in model.named_parameters()}
            expected_buffers = {f"buffers/{n}.tnsr" for n, _ in model.named_buffers()}
            expected = expected_params | expected_buffers | {"config.txt"}
            if names != expected:
                missing = sorted(expected - names)
                extra = sorted(names - expected)
                raise ValidationError(
                    f"checkpoint entries mismatch: missing {missing}, unexpected {extra}"
                )

            for p in model.named_parameters():
                arr = load_tensor(zf.read(f"params/{p.name}.tnsr"))
                if arr.shape != p.shape:
                    raise ValidationError(
                        f"checkpoint entry {p.name} has shape {arr.shape}, config implies {p.shape}"
                    )
                p.value = Tensor(arr, requires_grad=True)

            buffer_values = {}
            for name, current in model.named_buffers():
                arr = load_tensor(zf.read(f"buffers/{name}.tnsr"))
                if arr.shape != np.asarray(current).shape:
                    raise ValidationError(
                        f"checkpoint buffer {name} has shape {arr.shape}, "
                        f"config implies {np.asarray(current).shape}"
                    )
                buffer_values[name] = arr
            for bn in model._bn_modules():
                bn.load_buffers(buffer_values)
        return model


def components_config(
    base: TscFormerConfig, cnn: bool, ts: bool, former: bool, bridge: bool
) -> TscFormerConfig:
    """Map a component on/off row to a concrete model configuration.

    The cross-attention stage is the 'bridge', the self-attention +
    feed-forward stages are the 'former'; with both off the token
    machinery disappears entirely (insertion blocks empty).
    """
    if not cnn:
        raise ConfigError("the CNN backbone cannot be removed")
    bridge_cfg = replace(
        base.bridge,
        use_bridge=bridge,
        use_former=former,
        insertion_blocks=base.bridge.insertion_blocks if (former or bridge) else (),
    )
    return replace(base, use_shift=ts, bridge=bridge_cfg)
