import numpy as np
import pytest
import torch

from fauxnews.checkpoint import load_checkpoint, save_checkpoint
from fauxnews.data_model import BBox, CENTER_CROP
from fauxnews.encoders import FaceEncoder, ImageEncoder, TextEncoder, preprocess, tokenize
from fauxnews.forge import ForgeConfig, apply_image_manip, generate_base
from fauxnews.seeding import substream


@pytest.fixture(scope="module")
def image_encoder():
    return ImageEncoder(substream(3, "img"), channels=64, image_size=224)


@pytest.fixture(scope="module")
def text_encoder():
    return TextEncoder(substream(3, "txt"), dim=64, n_buckets=512)


@pytest.fixture(scope="module")
def face_encoder():
    return FaceEncoder(substream(3, "face"), dim=32, crop_size=32)


class TestPreprocess:
    def test_scale_and_shape(self):
        img = np.full((224, 224, 3), 255, dtype=np.uint8)
        t = preprocess(img)
        assert t.shape == (224, 224, 3)
        assert t.dtype == torch.float64
        assert float(t.max()) == 1.0

    def test_resize(self):
        img = np.zeros((100, 60, 3), dtype=np.uint8)
        assert preprocess(img).shape == (224, 224, 3)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            preprocess(np.zeros((224, 224), dtype=np.uint8))


class TestImageEncoder:
    def test_tap_shapes(self, image_encoder):
        taps = image_encoder(preprocess(np.zeros((224, 224, 3), dtype=np.uint8)))
        assert [tuple(t.shape) for t in taps] == [(56, 56, 64), (28, 28, 64), (14, 14, 64), (7, 7, 64)]

    def test_determinism(self, image_encoder):
        img = preprocess(np.random.default_rng(0).integers(0, 256, (224, 224, 3), dtype=np.uint8))
        a = image_encoder(img)
        b = image_encoder(img)
        assert all(torch.equal(x, y) for x, y in zip(a, b))

    def test_wrong_shape_rejected(self, image_encoder):
        with pytest.raises(ValueError):
            image_encoder(torch.zeros((100, 100, 3), dtype=torch.float64))

    def test_constant_input_bias_propagation_oracle(self, image_encoder):
        # independent scalar recursion for spatially constant inputs: each
        # stage's interior value is tanh(sum_k W v_prev + b)
        taps = image_encoder(preprocess(np.zeros((224, 224, 3), dtype=np.uint8)))
        v = torch.full((3,), -1.0, dtype=torch.float64)  # zero image, centered
        w_sum = image_encoder.stem_weight.sum(dim=(2, 3)).detach()
        v = torch.tanh(w_sum @ v + image_encoder.stem_bias.detach())
        centers = [taps[0][28, 28, :]]
        expected = [v]
        for k in range(3):
            w_sum = image_encoder.stage_weights[k].sum(dim=(2, 3)).detach()
            v = torch.tanh(w_sum @ v + image_encoder.stage_biases[k].detach())
            expected.append(v)
        centers += [taps[1][14, 14, :], taps[2][7, 7, :], taps[3][3, 3, :]]
        for got, want in zip(centers, expected):
            assert torch.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_taps_differentiable_fd(self):
        # finite-difference vs autograd on a scalar readout of all taps
        enc = ImageEncoder(substream(8, "small-img"), channels=6, image_size=32)
        rng = substream(9, "probe")
        img = torch.from_numpy(rng.uniform(0.2, 0.8, (32, 32, 3))).requires_grad_(True)
        readouts = [torch.from_numpy(rng.standard_normal(s)) for s in [(8, 8, 6), (4, 4, 6), (2, 2, 6), (1, 1, 6)]]

        def f(x):
            taps = enc(x)
            return sum((t * r).sum() for t, r in zip(taps, readouts))

        loss = f(img)
        loss.backward()
        analytic = img.grad.detach().clone()
        h = 1e-6
        for _ in range(25):
            i, j, c = (int(rng.integers(0, d)) for d in (32, 32, 3))
            probe = img.detach().clone()
            probe[i, j, c] += h
            up = f(probe)
            probe[i, j, c] -= 2 * h
            down = f(probe)
            fd = float((up - down) / (2 * h))
            an = float(analytic[i, j, c])
            assert abs(fd - an) / max(abs(an), abs(fd), 1e-8) <= 1e-4


class TestTextEncoder:
    def test_bag_invariance(self, text_encoder):
        assert torch.equal(text_encoder("a b"), text_encoder("b a"))

    def test_bag_invariance_long(self, text_encoder):
        words = "one two three four five six seven".split()
        rng = np.random.default_rng(5)
        base = text_encoder(" ".join(words))
        for _ in range(10):
            assert torch.equal(base, text_encoder(" ".join(rng.permutation(words))))

    def test_singleton_average(self, text_encoder):
        tok = "headline"
        from fauxnews.encoders import token_bucket

        b = token_bucket(tok, text_encoder.n_buckets)
        expected = text_encoder.proj.detach() @ text_encoder.table[b].detach()
        assert torch.allclose(text_encoder(tok), expected, rtol=0, atol=0)

    def test_case_and_whitespace_only(self, text_encoder):
        assert torch.equal(text_encoder("Big  News"), text_encoder("big news"))

    def test_empty_rejected(self, text_encoder):
        with pytest.raises(ValueError):
            text_encoder("   ")

    def test_disjoint_vocabulary_collision_sweep(self, text_encoder):
        # sampled collision check over disjoint random vocabularies
        rng = np.random.default_rng(11)
        for trial in range(50):
            a = " ".join(f"w{rng.integers(0, 10**9)}a" for _ in range(4))
            b = " ".join(f"w{rng.integers(0, 10**9)}b" for _ in range(4))
            assert not torch.equal(text_encoder(a), text_encoder(b))


class TestFaceEncoder:
    def test_identical_crops_identical_features(self, face_encoder):
        img = preprocess(np.random.default_rng(1).integers(0, 256, (224, 224, 3), dtype=np.uint8))
        bbox = BBox(0.3, 0.3, 0.7, 0.7)
        assert torch.equal(face_encoder.encode(img, bbox), face_encoder.encode(img, bbox))

    def test_absent_bbox_defaults_to_center_crop(self, face_encoder):
        img = preprocess(np.random.default_rng(2).integers(0, 256, (224, 224, 3), dtype=np.uint8))
        assert torch.equal(face_encoder.encode(img, None), face_encoder.encode(img, CENTER_CROP))

    def test_swapped_region_changes_feature(self, face_encoder):
        base = generate_base(ForgeConfig(n_samples=1, seed=31)).samples[0]
        swapped = apply_image_manip(base, "swap", seed=7)
        f_orig = face_encoder.encode(preprocess(base.image), base.face_bbox)
        f_swap = face_encoder.encode(preprocess(swapped.image), swapped.face_bbox)
        assert not torch.allclose(f_orig, f_swap)

    def test_degenerate_bbox_error(self, face_encoder):
        img = preprocess(np.zeros((224, 224, 3), dtype=np.uint8))
        bad = BBox.__new__(BBox)
        object.__setattr__(bad, "x1", 0.5)
        object.__setattr__(bad, "y1", 0.5)
        object.__setattr__(bad, "x2", 0.5)
        object.__setattr__(bad, "y2", 0.5)
        with pytest.raises((ValueError, Exception)):
            face_encoder.encode(img, bad)


class TestCheckpointRoundTrip:
    def test_bitwise_round_trip_preserves_outputs(self, tmp_path, text_encoder):
        path = tmp_path / "text.ckpt"
        arrays = {name: p.detach().numpy().copy() for name, p in text_encoder.named_parameters()}
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(arrays)
        for name in arrays:
            assert np.array_equal(loaded[name], arrays[name])
        clone = TextEncoder(substream(999, "other"), dim=64, n_buckets=512)
        with torch.no_grad():
            for name, p in clone.named_parameters():
                p.copy_(torch.from_numpy(loaded[name]))
        assert torch.equal(clone("same words here"), text_encoder("same words here"))

    def test_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        from fauxnews.checkpoint import CheckpointError

        with pytest.raises(CheckpointError):
            load_checkpoint(path)
