"""Sub-string decoder ops and the end-to-end gradient property."""

import numpy as np
import pytest

from helpers import fd_check, random_projection_loss
from smtr import decoder as D
from smtr import model as M
from smtr import tensor as T
from smtr.errors import VocabError
from smtr.model import ModelConfig
from smtr.synth import default_font, render_text
from smtr.tensor import Tensor
from smtr.vocab import CharVocab

CFG = ModelConfig()
VOCAB = CFG.vocab
RNG = np.random.default_rng(0)
PARAMS = M.init_params(CFG, RNG)


class TestEmbed:
    def test_identical_chars_identical_rows(self):
        win = np.full((1, 5), 3, dtype=np.int64)
        out = D.embed_substring(win, PARAMS).data[0]
        assert np.array_equal(out[0], out[1]) and np.array_equal(out[0], out[4])

    def test_all_blank_window(self):
        win = np.full((1, 5), VOCAB.blank_index, dtype=np.int64)
        out = D.embed_substring(win, PARAMS).data[0]
        blank_row = PARAMS["dec.char_emb"].data[VOCAB.blank_index]
        assert np.allclose(out, np.tile(blank_row, (5, 1)))

    def test_shape_and_range_check(self):
        out = D.embed_substring(np.zeros((7, 5), dtype=np.int64), PARAMS)
        assert out.shape == (7, 5, CFG.channels)
        with pytest.raises(VocabError):
            D.embed_substring(np.array([[VOCAB.blank_index + 1]]), PARAMS)


class TestQueries:
    def test_zero_value_projection_gives_pure_residual(self):
        params = dict(PARAMS)
        params["dec.enc_attn.wv"] = T.parameter(np.zeros((CFG.channels, CFG.channels),
                                                         dtype=np.float32))
        e_s = D.embed_substring(np.zeros((1, 5), dtype=np.int64), params)
        q = D.encode_queries(e_s, params, CFG.enc_heads).data[0]
        assert np.allclose(q[0], params["dec.tok_next"].data[0], atol=1e-7)
        assert np.allclose(q[1], params["dec.tok_prev"].data[0], atol=1e-7)

    def test_direction_rows_differ(self):
        e_s = D.embed_substring(np.zeros((1, 5), dtype=np.int64), PARAMS)
        q = D.encode_queries(e_s, PARAMS, CFG.enc_heads).data[0]
        assert not np.allclose(q[0], q[1])

    def test_gradient_through_query_encoding(self):
        rng = np.random.default_rng(1)
        c, ls, h = 8, 3, 2
        arrays = {
            "tok": rng.standard_normal((2, c)),
            "es": rng.standard_normal((ls, c)),
            "wq": rng.standard_normal((c, c)) * 0.5,
            "wk": rng.standard_normal((c, c)) * 0.5,
            "wv": rng.standard_normal((c, c)) * 0.5,
        }

        def loss(t):
            out, _ = T.multi_head_attention(t["tok"], t["es"], t["es"], t["wq"],
                                            t["wk"], t["wv"], h)
            return random_projection_loss(out + t["tok"])

        fd_check(loss, arrays)


class TestMatcher:
    def test_single_token_attention_is_one(self):
        q = Tensor(RNG.standard_normal((2, CFG.channels)).astype(np.float32))
        toks = Tensor(RNG.standard_normal((1, CFG.channels)).astype(np.float32))
        _, attn = D.match(q, toks, PARAMS, CFG.match_heads)
        assert np.allclose(attn.data, 1.0)

    def test_rows_sum_to_one(self):
        q = Tensor(RNG.standard_normal((2, CFG.channels)).astype(np.float32))
        toks = Tensor(RNG.standard_normal((40, CFG.channels)).astype(np.float32))
        _, attn = D.match(q, toks, PARAMS, CFG.match_heads)
        assert attn.shape == (CFG.match_heads, 2, 40)
        assert np.allclose(attn.data.sum(-1), 1.0, atol=1e-6)

    def test_plain_matcher_has_no_residual(self):
        params = dict(PARAMS)
        params["dec.match.wv"] = T.parameter(np.zeros((CFG.channels, CFG.channels),
                                                      dtype=np.float32))
        q = Tensor(RNG.standard_normal((2, CFG.channels)).astype(np.float32))
        toks = Tensor(RNG.standard_normal((6, CFG.channels)).astype(np.float32))
        out, _ = D.match(q, toks, params, CFG.match_heads, residual=False)
        assert np.allclose(out.data, 0.0)  # pure attention output, no +Q path
        out_res, _ = D.match(q, toks, params, CFG.match_heads, residual=True)
        assert np.allclose(out_res.data, q.data)


class TestClassifier:
    def test_uniform_at_zero_params(self):
        params = dict(PARAMS)
        params["dec.cls.w"] = T.parameter(np.zeros_like(PARAMS["dec.cls.w"].data))
        params["dec.cls.b"] = T.parameter(np.zeros_like(PARAMS["dec.cls.b"].data))
        f = Tensor(RNG.standard_normal((3, CFG.channels)).astype(np.float32))
        probs = T.softmax(D.classify(f, params), axis=-1).data
        assert np.allclose(probs, 1.0 / VOCAB.num_classes, atol=1e-7)

    def test_output_width(self):
        f = Tensor(np.zeros((4, CFG.channels), dtype=np.float32))
        assert D.classify(f, PARAMS).shape == (4, VOCAB.num_classes)


class TestQueryCosine:
    def test_self_and_negation(self):
        q = RNG.standard_normal(16)
        assert D.query_cosine(q, q) == pytest.approx(1.0)
        assert D.query_cosine(q, -q) == pytest.approx(-1.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            D.query_cosine(np.zeros(4), np.ones(4))


class TestEndToEnd:
    def test_shared_parameters_both_directions(self):
        # both direction rows flow through the same matcher and classifier
        img = render_text("DAT", default_font(), 32)
        win = np.array([[VOCAB.blank_index] * 5], dtype=np.int64)
        with T.no_grad():
            toks = M.encode_images(PARAMS, CFG, [img])
            logits, _ = M.substring_logits(PARAMS, CFG, toks, win[None])
        assert logits.shape == (1, 1, 2, VOCAB.num_classes)

    def test_tiny_model_full_gradient(self):
        """Gradient check from the loss into every parameter group."""
        tiny = ModelConfig(charset="ADE", base_channels=8, stage_depths=(1, 1, 1),
                           substring_len=3, height=16)
        rng = np.random.default_rng(7)
        params = M.init_params(tiny, rng)
        vocab = tiny.vocab
        pixels = rng.random((1, 16, 16)).astype(np.float64)  # 8 tokens
        windows = np.array([[[vocab.blank_index] * 3, [0, 1, 2]]], dtype=np.int64)
        labels = np.array([[[0, 2], [1, -1]]], dtype=np.int64)

        def loss(t):
            toks = M.encode_images(t, tiny, pixels)
            logits, _ = M.substring_logits(t, tiny, toks, windows)
            s, k = T.cross_entropy_masked(logits, labels)
            return s * (1.0 / k)

        arrays = {k: v.data.astype(np.float64) for k, v in params.items()}
        worst = fd_check(loss, arrays, max_coords=3, rng=rng)
        assert worst < 1e-3
