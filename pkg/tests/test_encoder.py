"""Image encoder: shape schedule, identity blocks, gradients, extrapolation."""

import numpy as np
import pytest

from helpers import fd_check, random_projection_loss
from smtr import tensor as T
from smtr.encoder import EncoderConfig, encode_image, init_encoder_params, mixer_block, patch_embed
from smtr.errors import ShapeError
from smtr.tensor import Tensor

CFG = EncoderConfig(base_channels=16)
RNG = np.random.default_rng(0)
PARAMS = init_encoder_params(CFG, RNG)


def _img(h, w, b=1, rng=None):
    rng = rng or RNG
    return Tensor(rng.random((b, 1, h, w), dtype=np.float32))


class TestPatchEmbed:
    def test_spatial_quarters(self):
        out = patch_embed(_img(32, 128), PARAMS)
        assert out.shape == (1, 16, 8, 32)
        out = patch_embed(_img(32, 384), PARAMS)
        assert out.shape == (1, 16, 8, 96)

    def test_zero_image_zero_bias_gives_zero(self):
        params = dict(PARAMS)
        out = patch_embed(Tensor(np.zeros((1, 1, 32, 64), dtype=np.float32)), params)
        assert np.all(out.data == 0.0)

    def test_indivisible_dims_rejected(self):
        with pytest.raises(ShapeError):
            patch_embed(_img(30, 128), PARAMS)
        with pytest.raises(ShapeError):
            patch_embed(_img(32, 126), PARAMS)


class TestEncode:
    def test_token_count_and_channels(self):
        out = encode_image(_img(32, 128), PARAMS, CFG)
        assert out.shape == (1, 128, 64)  # HW/32 tokens x 4*C0
        out = encode_image(_img(32, 384), PARAMS, CFG)
        assert out.shape == (1, 384, 64)

    def test_width_doubling_doubles_tokens(self):
        t1 = encode_image(_img(32, 64), PARAMS, CFG).shape[1]
        t2 = encode_image(_img(32, 128), PARAMS, CFG).shape[1]
        assert t2 == 2 * t1

    def test_deterministic(self):
        x = _img(32, 64, rng=np.random.default_rng(5))
        a = encode_image(x, PARAMS, CFG).data
        b = encode_image(x, PARAMS, CFG).data
        assert np.array_equal(a, b)

    def test_width_extrapolation_beyond_training_cap(self):
        # no fixed-length positional state: any width divisible by 4 encodes
        out = encode_image(_img(32, 1024), PARAMS, CFG)
        assert out.shape == (1, 1024, 64)

    def test_token_count_invariant_random_widths(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            w = 4 * int(rng.integers(4, 100))
            out = encode_image(_img(32, w), PARAMS, CFG)
            assert out.shape == (1, 32 * w // 32, 64)


class TestMixerBlock:
    def _block_params(self, ch, rng):
        cfg = EncoderConfig(base_channels=ch // 4 if ch % 4 == 0 else ch, stage_depths=(1, 0, 0))
        # build standalone block params at an arbitrary channel count
        p = {}
        p["blk.ln1.g"] = T.parameter(np.ones(ch, dtype=np.float32))
        p["blk.ln1.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
        p["blk.dw.w"] = T.parameter(rng.standard_normal((ch, 3, 5)).astype(np.float32) * 0.2)
        p["blk.dw.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
        p["blk.ln2.g"] = T.parameter(np.ones(ch, dtype=np.float32))
        p["blk.ln2.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
        p["blk.fc1.w"] = T.parameter(rng.standard_normal((ch, 2 * ch)).astype(np.float32) * 0.2)
        p["blk.fc1.b"] = T.parameter(np.zeros(2 * ch, dtype=np.float32))
        p["blk.fc2.w"] = T.parameter(rng.standard_normal((2 * ch, ch)).astype(np.float32) * 0.2)
        p["blk.fc2.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
        return p

    def test_identity_with_zeroed_final_projections(self):
        rng = np.random.default_rng(2)
        p = self._block_params(8, rng)
        p["blk.dw.w"] = T.parameter(np.zeros((8, 3, 5), dtype=np.float32))
        p["blk.fc2.w"] = T.parameter(np.zeros((16, 8), dtype=np.float32))
        x = Tensor(rng.standard_normal((2, 8, 4, 6)).astype(np.float32))
        out = mixer_block(x, p, "blk", (3, 5))
        assert np.allclose(out.data, x.data, atol=1e-7)

    def test_shape_preserving_random_shapes(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            ch = int(rng.integers(2, 9))
            h = int(rng.integers(2, 7))
            w = int(rng.integers(2, 11))
            p = self._block_params(ch, rng)
            x = Tensor(rng.standard_normal((1, ch, h, w)).astype(np.float32))
            assert mixer_block(x, p, "blk", (3, 5)).shape == x.shape

    def test_gradient_on_4x4x8(self):
        rng = np.random.default_rng(4)
        base = self._block_params(8, rng)
        arrays = {k: v.data.astype(np.float64) for k, v in base.items()}
        arrays["x"] = rng.standard_normal((1, 8, 4, 4))

        def loss(t):
            return random_projection_loss(mixer_block(t["x"], t, "blk", (3, 5)))

        fd_check(loss, arrays, max_coords=6)
