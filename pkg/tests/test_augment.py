"""Crop/resize/flip chain: identities, involution, determinism, alignment."""

import numpy as np
import pytest

from tscformer.augment import ClipPair, apply_geometry, augment, resize_bilinear
from tscformer.errors import ValidationError
from tscformer.tensor import Tensor


def make_pair(t=2, h=32, w=32, seed=0):
    g = np.random.default_rng(seed)
    rgb = g.random((t, 3, h, w))
    event = g.random((t, 3, h, w))
    times = tuple(i * 1000 for i in range(t))
    return ClipPair(rgb=Tensor(rgb), event=Tensor(event), label=0, frame_times=times)


class TestResize:
    def test_same_size_is_identity(self):
        x = np.random.default_rng(1).random((3, 5, 5))
        assert np.array_equal(resize_bilinear(x, 5, 5), x)

    def test_constant_preserved(self):
        x = np.full((1, 8, 8), 0.7)
        out = resize_bilinear(x, 5, 5)
        assert np.allclose(out, 0.7, atol=1e-12)

    def test_range_preserved(self):
        x = np.random.default_rng(2).random((2, 9, 9))
        out = resize_bilinear(x, 13, 13)
        assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


class TestAugment:
    def test_eval_same_size_identity(self):
        pair = make_pair(h=32, w=32)
        out = augment(pair, None, "eval", target=32)
        assert np.array_equal(out.rgb.data, pair.rgb.data)
        assert np.array_equal(out.event.data, pair.event.data)

    def test_flip_is_involution(self):
        pair = make_pair()
        once = apply_geometry(pair.rgb.data, 0, 0, 32, flip=True, target=32)
        twice = apply_geometry(once, 0, 0, 32, flip=True, target=32)
        assert np.array_equal(twice, pair.rgb.data)

    def test_fixed_seed_reproducible(self):
        pair = make_pair()
        a = augment(pair, np.random.default_rng(7), "train", target=24)
        b = augment(pair, np.random.default_rng(7), "train", target=24)
        assert a.rgb.data.tobytes() == b.rgb.data.tobytes()
        assert a.event.data.tobytes() == b.event.data.tobytes()

    def test_train_output_shape_and_label(self):
        pair = make_pair(t=3)
        out = augment(pair, np.random.default_rng(3), "train", target=24)
        assert out.rgb.shape == (3, 3, 24, 24)
        assert out.event.shape == (3, 3, 24, 24)
        assert out.label == pair.label
        assert out.frame_times == pair.frame_times

    def test_marker_stays_colocated(self):
        # identical geometry on both modalities: a bright 2x2 marker embedded
        # at the same spot must land at the same argmax after augmentation
        for seed in range(10):
            g = np.random.default_rng(seed)
            rgb = np.zeros((2, 3, 32, 32))
            event = np.zeros((2, 3, 32, 32))
            r, c = int(g.integers(4, 26)), int(g.integers(4, 26))
            rgb[:, :, r : r + 2, c : c + 2] = 1.0
            event[:, :, r : r + 2, c : c + 2] = 1.0
            pair = ClipPair(Tensor(rgb + 1e-9), Tensor(event + 1e-9), 0, (0, 1000))
            out = augment(pair, np.random.default_rng(seed + 100), "train", target=32)
            for frame in range(2):
                a = np.unravel_index(out.rgb.data[frame, 0].argmax(), (32, 32))
                b = np.unravel_index(out.event.data[frame, 0].argmax(), (32, 32))
                assert a == b

    def test_target_larger_than_source_rejected(self):
        pair = make_pair(h=16, w=16)
        with pytest.raises(ValidationError):
            augment(pair, np.random.default_rng(0), "train", target=32)

    def test_too_small_clip_rejected(self):
        pair = make_pair(h=16, w=16)
        bad = ClipPair(
            Tensor(pair.rgb.data[:, :, :4, :4]),
            Tensor(pair.event.data[:, :, :4, :4]),
            0,
            pair.frame_times,
        )
        with pytest.raises(ValidationError):
            augment(bad, np.random.default_rng(0), "train", target=4)

    def test_bad_mode(self):
        with pytest.raises(ValidationError):
            augment(make_pair(), None, "test", target=32)


class TestClipPair:
    def test_mismatched_shapes_rejected(self):
        g = np.random.default_rng(0)
        with pytest.raises(ValidationError):
            ClipPair(Tensor(g.random((2, 3, 8, 8))), Tensor(g.random((2, 3, 8, 4))), 0, (0, 1))

    def test_frame_times_must_increase(self):
        g = np.random.default_rng(0)
        clip = Tensor(g.random((2, 3, 8, 8)))
        with pytest.raises(ValidationError):
            ClipPair(clip, Tensor(clip.data.copy()), 0, (5, 5))
