"""Model assembly: stems, stages, forward contracts, bookkeeping, checkpoints."""

import numpy as np
import pytest

from tscformer.bridge import BridgeConfig
from tscformer.errors import ConfigError, DimensionError, ValidationError
from tscformer.fusion import FusionConfig
from tscformer.layers import BatchNorm2d, Conv2d
from tscformer.model import Bottleneck, ResidualStage, Stem, TscFormer, TscFormerConfig, components_config
from tscformer.shift import ShiftConfig, temporal_shift
from tscformer.tensor import (
    Tensor,
    add,
    cross_entropy,
    grad_check,
    mul,
    no_grad,
    relu,
    reshape,
    tensor_sum,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def tiny_config(**overrides):
    """The finite-difference-sized model: T=2, 8x8 input, [4,4,8,8] stages."""
    defaults = dict(
        num_classes=3,
        frames=2,
        height=8,
        width=8,
        channels=(4, 4, 8, 8),
        blocks=(1, 1, 1, 1),
        token_count=2,
        token_dim=8,
        shift=ShiftConfig(divisions=4),
        bridge=BridgeConfig(depth=1, heads=2, ffn_expansion=2),
    )
    defaults.update(overrides)
    return TscFormerConfig(**defaults)


def clips(config, batch=2, seed=0):
    g = rng(seed)
    shape = (batch, config.frames, 3, config.height, config.width)
    return Tensor(g.random(shape)), Tensor(g.random(shape))


class TestStem:
    def test_quarters_spatial_extents(self):
        stem = Stem("stem", 8, rng(1))
        out = stem(Tensor(rng(2).random((4, 3, 32, 32))), train=True)
        assert out.shape == (4, 8, 8, 8)

    def test_zero_input_zero_output(self):
        # bias-free conv + zero-initialized bn beta: the zero clip stays zero
        stem = Stem("stem", 4, rng(3))
        out = stem(Tensor(np.zeros((2, 3, 16, 16)) + 0.0), train=True)
        assert np.all(out.data == 0.0)

    def test_grad_check(self):
        stem = Stem("stem", 2, rng(4))
        g = rng(5)
        x = g.random((2, 3, 8, 8))
        coeff_holder = {}

        def f(t):
            out = stem(t, train=True)
            if "c" not in coeff_holder:
                coeff_holder["c"] = Tensor(rng(6).standard_normal(out.shape))
            return tensor_sum(mul(out, coeff_holder["c"]))

        assert grad_check(f, Tensor(x)) < 1e-4


class TestBottleneckAndStage:
    def test_stride_two_halves_spatial(self):
        stage = ResidualStage("s", 4, 8, stride=2, blocks=1, use_shift=False,
                              shift_cfg=ShiftConfig(divisions=4), rng=rng(7))
        out = stage(Tensor(rng(8).random((1, 2, 4, 8, 8))), train=True)
        assert out.shape == (1, 2, 8, 4, 4)

    def test_zero_final_gamma_reduces_to_shortcut(self):
        block = Bottleneck("b", 4, 8, stride=2, rng=rng(9))
        block.bn3.gamma.value = Tensor(np.zeros(8), requires_grad=True)
        x = Tensor(rng(10).random((2, 4, 6, 6)))
        out = block(x, train=True)
        shortcut = block.shortcut_bn(block.shortcut_conv(x), train=True)
        assert np.array_equal(out.data, np.maximum(shortcut.data, 0.0))

    def test_identity_shortcut_when_shape_preserved(self):
        block = Bottleneck("b", 8, 8, stride=1, rng=rng(11))
        assert block.shortcut_conv is None

    def test_stage_matches_manual_composition(self):
        cfg = ShiftConfig(divisions=4)
        stage = ResidualStage("s", 4, 4, stride=1, blocks=2, use_shift=True,
                              shift_cfg=cfg, rng=rng(12))
        x = Tensor(rng(13).random((2, 3, 4, 5, 5)))
        got = stage(x, train=True)

        shifted = temporal_shift(x, cfg)
        y = reshape(shifted, (6, 4, 5, 5))
        for unit in stage.units:
            for bn in unit.bns():
                bn.state.__init__(bn.state.running_mean.size)  # replay from scratch
            y = unit(y, train=True)
        assert np.array_equal(got.data, reshape(y, (2, 3, 4, 5, 5)).data)


class TestModelForward:
    @pytest.mark.parametrize(
        "overrides,batch",
        [
            (dict(), 2),
            (dict(channels=(4, 8, 8, 16), token_count=3, num_classes=5,
                  bridge=BridgeConfig(depth=2, heads=4, insertion_blocks=(2, 4))), 1),
            (dict(frames=3, fusion=FusionConfig("add"),
                  bridge=BridgeConfig(heads=1, insertion_blocks=(1,))), 2),
        ],
    )
    def test_output_shape(self, overrides, batch):
        config = tiny_config(**overrides)
        model = TscFormer(config, seed=1)
        rgb, evt = clips(config, batch=batch, seed=2)
        logits = model.forward(rgb, evt, train=True)
        assert logits.shape == (batch, config.num_classes)

    def test_eval_determinism_bit_identical(self):
        config = tiny_config()
        model = TscFormer(config, seed=3)
        rgb, evt = clips(config, seed=4)
        model.forward(rgb, evt, train=True)  # seed batchnorm running stats
        with no_grad():
            a = model.forward(rgb, evt, train=False)
            b = model.forward(rgb, evt, train=False)
        assert a.data.tobytes() == b.data.tobytes()

    def test_batch_permutation_equivariance(self):
        config = tiny_config()
        model = TscFormer(config, seed=5)
        rgb, evt = clips(config, batch=4, seed=6)
        with no_grad():
            base = model.forward(rgb, evt, train=True).data
            perm = np.array([2, 0, 3, 1])
            permuted = model.forward(
                Tensor(rgb.data[perm]), Tensor(evt.data[perm]), train=True
            ).data
        assert np.max(np.abs(base[perm] - permuted)) < 1e-12

    def test_shape_validation(self):
        config = tiny_config()
        model = TscFormer(config, seed=7)
        rgb, evt = clips(config)
        with pytest.raises(DimensionError):
            model.forward(rgb, Tensor(evt.data[:, :, :, :4, :]), train=True)
        wrong = Tensor(rng(8).random((1, 4, 3, 8, 8)))
        with pytest.raises(DimensionError):
            model.forward(wrong, wrong, train=True)

    def test_loss_delegates_to_cross_entropy(self):
        config = tiny_config()
        model = TscFormer(config, seed=9)
        logits = Tensor(rng(10).standard_normal((4, 3)))
        labels = np.array([0, 1, 2, 1])
        assert model.loss(logits, labels).item() == cross_entropy(logits, labels).item()
        uniform = Tensor(np.zeros((2, 3)))
        assert abs(model.loss(uniform, np.array([0, 2])).item() - np.log(3.0)) < 1e-12


class TestGradients:
    def test_input_and_sampled_parameter_gradients(self):
        # probe the full-network Jacobian through a fixed weighting of the
        # logits; the cross-entropy op has its own dedicated gradient tests
        config = tiny_config()
        model = TscFormer(config, seed=11)
        g = rng(12)
        rgb = g.random((1, 2, 3, 8, 8))
        evt = Tensor(g.random((1, 2, 3, 8, 8)))
        coeff = Tensor(g.standard_normal((1, config.num_classes)))

        def probe_with_rgb(t):
            return tensor_sum(mul(model.forward(t, evt, train=True), coeff))

        assert grad_check(probe_with_rgb, Tensor(rgb)) < 1e-4

        rgb_t = Tensor(rgb)

        def probe_with_param(param):
            def f(t):
                param.value = t
                return tensor_sum(mul(model.forward(rgb_t, evt, train=True), coeff))

            return f

        by_name = {p.name: p for p in model.named_parameters()}
        for name in ["tokens", "classifier.w", "bridge1.unit1.attn.wq.w", "fuse_rgb2.w"]:
            param = by_name[name]
            original = param.value
            assert grad_check(probe_with_param(param), original) < 1e-4, name
            param.value = original

    def test_training_loss_gradients_flow_at_init(self):
        config = tiny_config()
        model = TscFormer(config, seed=11)
        g = rng(12)
        rgb = Tensor(g.random((2, 2, 3, 8, 8)))
        evt = Tensor(g.random((2, 2, 3, 8, 8)))
        loss = model.loss(model.forward(rgb, evt, train=True), np.array([1, 0]))
        # unsaturated at init: close to ln(num_classes)
        assert 0.5 < loss.item() < 2.0
        from tscformer.tensor import backward

        backward(loss)
        grads = [np.abs(p.grad).max() for p in model.named_parameters()]
        assert max(grads) > 1e-4


class TestParameterBookkeeping:
    def test_deterministic_count_and_init(self):
        a = TscFormer(tiny_config(), seed=13)
        b = TscFormer(tiny_config(), seed=13)
        assert a.parameter_count() == b.parameter_count()
        for pa, pb in zip(a.named_parameters(), b.named_parameters()):
            assert pa.name == pb.name
            assert np.array_equal(pa.value.data, pb.value.data)

    def test_removing_insertions_drops_exactly_bridge_machinery(self):
        config = tiny_config()
        full = TscFormer(config, seed=14)
        bare = TscFormer(
            tiny_config(bridge=BridgeConfig(depth=1, heads=2, ffn_expansion=2,
                                            insertion_blocks=())),
            seed=14,
        )
        prefixes = ("bridge", "inject_rgb", "inject_evt", "fuse_rgb", "fuse_evt", "tokens")
        machinery = sum(
            p.size for p in full.named_parameters() if p.name.startswith(prefixes)
        )
        # the classifier also narrows by the flattened token columns
        classifier_delta = config.token_count * config.token_dim * config.num_classes
        assert full.parameter_count() - bare.parameter_count() == machinery + classifier_delta
        bare_names = {p.name for p in bare.named_parameters()}
        assert not any(n.startswith(prefixes) for n in bare_names)

    def test_concat_vs_add_changes_only_fusion_convs(self):
        base = tiny_config()
        cat = TscFormer(base, seed=15)
        added = TscFormer(tiny_config(fusion=FusionConfig("add")), seed=15)
        expected_delta = sum(
            2 * base.channels[i - 1] ** 2 for i in base.bridge.insertion_blocks
        )
        assert cat.parameter_count() - added.parameter_count() == expected_delta
        for pa, pb in zip(cat.named_parameters(), added.named_parameters()):
            assert pa.name == pb.name
            if not pa.name.startswith(("fuse_rgb", "fuse_evt")):
                assert pa.shape == pb.shape

    def test_components_mapping(self):
        base = tiny_config()
        row5 = components_config(base, cnn=True, ts=True, former=False, bridge=False)
        assert row5.bridge.insertion_blocks == ()
        row6 = components_config(base, cnn=True, ts=False, former=False, bridge=False)
        assert not row6.use_shift and row6.bridge.insertion_blocks == ()
        row3 = components_config(base, cnn=True, ts=True, former=False, bridge=True)
        assert row3.bridge.use_bridge and not row3.bridge.use_former
        assert row3.bridge.insertion_blocks == base.bridge.insertion_blocks
        with pytest.raises(ConfigError):
            components_config(base, cnn=False, ts=True, former=True, bridge=True)


class TestCheckpoint:
    def test_round_trip_bit_identical_logits(self, tmp_path):
        config = tiny_config()
        model = TscFormer(config, seed=16)
        rgb, evt = clips(config, seed=17)
        model.forward(rgb, evt, train=True)  # give running stats real values
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path)
        loaded = TscFormer.load_checkpoint(path)
        with no_grad():
            a = model.forward(rgb, evt, train=False).data
            b = loaded.forward(rgb, evt, train=False).data
        assert a.tobytes() == b.tobytes()

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        config = tiny_config()
        model = TscFormer(config, seed=18)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        model.save_checkpoint(p1)
        model.save_checkpoint(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_entry_shape_rejected(self, tmp_path):
        import zipfile

        from tscformer.tnsr import dump_tensor

        config = tiny_config()
        model = TscFormer(config, seed=19)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path)

        bad = tmp_path / "bad.ckpt"
        with zipfile.ZipFile(path) as src, zipfile.ZipFile(bad, "w") as dst:
            for name in src.namelist():
                data = src.read(name)
                if name == "params/tokens.tnsr":
                    data = dump_tensor(np.zeros((5, 5)))
                dst.writestr(name, data)
        with pytest.raises(ValidationError, match="tokens"):
            TscFormer.load_checkpoint(bad)

    def test_missing_entry_rejected(self, tmp_path):
        import zipfile

        config = tiny_config()
        model = TscFormer(config, seed=20)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path)
        bad = tmp_path / "bad.ckpt"
        with zipfile.ZipFile(path) as src, zipfile.ZipFile(bad, "w") as dst:
            for name in src.namelist():
                if name != "params/classifier.w.tnsr":
                    dst.writestr(name, src.read(name))
        with pytest.raises(ValidationError, match="classifier"):
            TscFormer.load_checkpoint(bad)


class TestConfigText:
    def test_round_trip(self):
        config = tiny_config(
            bridge=BridgeConfig(depth=2, heads=2, insertion_blocks=(1, 3)),
            fusion=FusionConfig("add"),
        )
        assert TscFormerConfig.from_text(config.to_text()) == config

    def test_empty_insertions_round_trip(self):
        config = tiny_config(bridge=BridgeConfig(heads=2, insertion_blocks=()))
        assert TscFormerConfig.from_text(config.to_text()) == config

    def test_missing_key_named(self):
        text = tiny_config().to_text().replace("num_classes = 3\n", "")
        with pytest.raises(ConfigError, match="num_classes"):
            TscFormerConfig.from_text(text)

    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(height=10)  # not divisible by 4
        with pytest.raises(ConfigError):
            tiny_config(channels=(4, 4, 8, 8), shift=ShiftConfig(divisions=8))
        with pytest.raises(ConfigError):
            tiny_config(num_classes=1)
        with pytest.raises(ConfigError):
            tiny_config(token_dim=6, bridge=BridgeConfig(heads=4))
