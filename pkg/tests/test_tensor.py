"""Tensor engine: forward semantics, invariants, and gradient checks."""

import math

import numpy as np
import pytest

from helpers import fd_check, random_projection_loss
from smtr import tensor as T
from smtr.errors import ConfigError, ShapeError, VocabError
from smtr.tensor import Tensor


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(T.matmul(a, b).data, [[1, 2], [3, 4]])

    def test_selector_row(self):
        out = T.matmul(Tensor([[1.0, 0.0]]), Tensor([[5.0], [7.0]]))
        assert out.data.tolist() == [[5.0]]

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        arrays = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}
        fd_check(lambda t: random_projection_loss(T.matmul(t["a"], t["b"])), arrays)

    def test_batched_and_broadcast_gradients(self):
        rng = np.random.default_rng(2)
        arrays = {"a": rng.standard_normal((2, 3, 4)), "b": rng.standard_normal((4, 5))}
        fd_check(lambda t: random_projection_loss(T.matmul(t["a"], t["b"])), arrays)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3] * 3)

    def test_single_element(self):
        for c in (-5.0, 0.0, 17.3):
            assert np.allclose(T.softmax(Tensor([c])).data, [1.0])

    def test_forced_ratio(self):
        out = T.softmax(Tensor([0.0, math.log(2.0)]))
        assert np.allclose(out.data, [1 / 3, 2 / 3], atol=1e-6)

    def test_rows_sum_to_one_and_shift_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.standard_normal((4, 7)).astype(np.float32) * 5
            y = T.softmax(Tensor(x), axis=-1).data
            assert np.allclose(y.sum(-1), 1.0, atol=1e-6)
            y2 = T.softmax(Tensor(x + 123.0), axis=-1).data
            assert np.allclose(y, y2, atol=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        arrays = {"x": rng.standard_normal((3, 5))}
        fd_check(lambda t: random_projection_loss(T.softmax(t["x"], axis=-1)), arrays)


class TestCrossEntropyMasked:
    def test_masked_label_is_exactly_zero_with_zero_grad(self):
        logits = Tensor(np.random.default_rng(0).standard_normal((1, 6)), requires_grad=True)
        loss, n = T.cross_entropy_masked(logits, np.array([-1]))
        assert loss.item() == 0.0 and n == 0
        loss.backward()
        assert np.all(logits.grad == 0.0)

    def test_uniform_logits_give_log_k(self):
        for k in (2, 5, 21):
            loss, n = T.cross_entropy_masked(Tensor(np.zeros((1, k))), np.array([0]))
            assert n == 1
            assert abs(loss.item() - math.log(k)) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(VocabError):
            T.cross_entropy_masked(Tensor(np.zeros((1, 4))), np.array([4]))
        with pytest.raises(VocabError):
            T.cross_entropy_masked(Tensor(np.zeros((1, 4))), np.array([-2]))

    def test_gradient(self):
        rng = np.random.default_rng(5)
        labels = np.array([2, -1, 0, 4])
        arrays = {"x": rng.standard_normal((4, 5)) * 3}

        def loss(t):
            s, _ = T.cross_entropy_masked(t["x"], labels)
            return s

        fd_check(loss, arrays)


class TestMultiHeadAttention:
    def _weights(self, rng, c):
        return {w: rng.standard_normal((c, c)) * 0.5 for w in ("wq", "wk", "wv")}

    def test_single_key_attention_is_one(self):
        rng = np.random.default_rng(6)
        c, h = 8, 2
        ws = self._weights(rng, c)
        q = Tensor(rng.standard_normal((3, c)))
        kv = Tensor(rng.standard_normal((1, c)))
        out, attn = T.multi_head_attention(q, kv, kv, Tensor(ws["wq"]), Tensor(ws["wk"]),
                                           Tensor(ws["wv"]), h)
        assert np.allclose(attn.data, 1.0)
        vw = kv.data @ ws["wv"]
        assert np.allclose(out.data, np.repeat(vw, 3, axis=0), atol=1e-5)

    def test_saturated_softmax_selects_matching_row(self):
        # one huge matching key, orthogonal others: output ~ that key's value row
        c = 4
        eye = Tensor(np.eye(c))
        k = np.zeros((3, c), dtype=np.float32)
        k[0, 0] = 40.0
        k[1, 1] = 40.0
        k[2, 2] = 40.0
        q = np.zeros((1, c), dtype=np.float32)
        q[0, 1] = 40.0
        out, attn = T.multi_head_attention(Tensor(q), Tensor(k), Tensor(k), eye, eye, eye, 1)
        assert attn.data[0, 0, 1] > 0.999
        assert np.allclose(out.data[0], k[1], atol=1e-2)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(7)
        c, h = 16, 4
        ws = self._weights(rng, c)
        out, attn = T.multi_head_attention(
            Tensor(rng.standard_normal((5, c))), Tensor(rng.standard_normal((9, c))),
            Tensor(rng.standard_normal((9, c))), Tensor(ws["wq"]), Tensor(ws["wk"]),
            Tensor(ws["wv"]), h)
        assert attn.shape == (h, 5, 9)
        assert np.allclose(attn.data.sum(-1), 1.0, atol=1e-6)

    def test_head_count_must_divide_channels(self):
        x = Tensor(np.zeros((2, 6)))
        w = Tensor(np.zeros((6, 6)))
        with pytest.raises(ConfigError):
            T.multi_head_attention(x, x, x, w, w, w, 4)

    def test_gradients_all_six_weight_groups(self):
        rng = np.random.default_rng(8)
        c, h = 8, 2
        arrays = {
            "q": rng.standard_normal((2, c)),
            "k": rng.standard_normal((4, c)),
            "wq": rng.standard_normal((c, c)) * 0.5,
            "wk": rng.standard_normal((c, c)) * 0.5,
            "wv": rng.standard_normal((c, c)) * 0.5,
        }

        def loss(t):
            out, _ = T.multi_head_attention(t["q"], t["k"], t["k"], t["wq"], t["wk"],
                                            t["wv"], h)
            return random_projection_loss(out)

        fd_check(loss, arrays)


class TestConvolutions:
    @pytest.mark.parametrize("stride,pad,shape,kern", [
        (1, 1, (2, 3, 5, 6), (4, 3, 3, 3)),
        (2, 1, (2, 2, 6, 8), (3, 2, 3, 3)),
        ((2, 1), 1, (1, 2, 6, 5), (4, 2, 3, 3)),
        (2, 0, (1, 1, 7, 9), (2, 1, 3, 3)),
    ])
    def test_conv2d_gradients(self, stride, pad, shape, kern):
        rng = np.random.default_rng(9)
        arrays = {"x": rng.standard_normal(shape), "w": rng.standard_normal(kern),
                  "b": rng.standard_normal(kern[0])}

        def loss(t):
            return random_projection_loss(T.conv2d(t["x"], t["w"], t["b"], stride, pad))

        fd_check(loss, arrays)

    def test_depthwise_gradients(self):
        rng = np.random.default_rng(10)
        arrays = {"x": rng.standard_normal((2, 3, 4, 6)),
                  "w": rng.standard_normal((3, 3, 5)),
                  "b": rng.standard_normal(3)}

        def loss(t):
            return random_projection_loss(T.depthwise_conv2d(t["x"], t["w"], t["b"],
                                                             padding=(1, 2)))

        fd_check(loss, arrays)

    def test_conv_matches_manual_small_case(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0  # center tap: conv is identity with pad 1
        out = T.conv2d(Tensor(x), Tensor(w), None, stride=1, padding=1)
        assert np.allclose(out.data, x)


class TestLayerNormAndGelu:
    def test_layer_norm_normalizes(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 6, 3, 3)).astype(np.float32) * 4 + 2
        g = Tensor(np.ones(6))
        b = Tensor(np.zeros(6))
        y = T.layer_norm(Tensor(x), g, b, axis=1).data
        assert np.allclose(y.mean(axis=1), 0.0, atol=1e-5)
        assert np.allclose(y.var(axis=1), 1.0, atol=1e-3)

    def test_layer_norm_gradient(self):
        rng = np.random.default_rng(12)
        arrays = {"x": rng.standard_normal((2, 4, 3)),
                  "g": rng.standard_normal(4) + 1.0,
                  "b": rng.standard_normal(4)}

        def loss(t):
            return random_projection_loss(T.layer_norm(t["x"], t["g"], t["b"], axis=1))

        fd_check(loss, arrays)

    def test_gelu_values_and_gradient(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0
        assert T.gelu(Tensor([10.0])).data[0] == pytest.approx(10.0, abs=1e-3)
        rng = np.random.default_rng(13)
        fd_check(lambda t: random_projection_loss(T.gelu(t["x"])),
                 {"x": rng.standard_normal((11,))})


class TestPlumbingOps:
    def test_index_select_accumulates_duplicates(self):
        table = Tensor(np.arange(6, dtype=np.float32).reshape(3, 2), requires_grad=True)
        out = T.index_select(table, np.array([0, 2, 0]))
        T.sum_all(out).backward()
        assert np.allclose(table.grad, [[2, 2], [0, 0], [1, 1]])

    def test_index_select_out_of_range(self):
        with pytest.raises(VocabError):
            T.index_select(Tensor(np.zeros((3, 2))), np.array([3]))

    def test_concat_broadcast_getitem_gradients(self):
        rng = np.random.default_rng(14)
        arrays = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((1, 3))}

        def loss(t):
            c = T.concat([t["a"], T.broadcast_to(t["b"], (2, 3))], axis=0)
            return random_projection_loss(c[1:, :2])

        fd_check(loss, arrays)

    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            (x + 1.0).backward()

    def test_no_grad_blocks_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = T.sum_all(x * 2.0)
        assert not y.requires_grad

    def test_graph_freed_after_backward(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = T.sum_all(x * 2.0)
        y.backward()
        assert y._parents == () and y._backward is None

    def test_grad_accumulates_across_backwards(self):
        x = Tensor(np.ones(3), requires_grad=True)
        T.sum_all(x * 2.0).backward()
        T.sum_all(x * 2.0).backward()
        assert np.allclose(x.grad, 4.0)


def test_randomized_gradient_sweep_20_shapes():
    """Criterion-style sweep: simple composite graphs on random shapes."""
    rng = np.random.default_rng(42)
    for i in range(20):
        m, k, n = rng.integers(1, 5, size=3)
        arrays = {"a": rng.standard_normal((m, k)), "b": rng.standard_normal((k, n))}

        def loss(t):
            h = T.gelu(T.matmul(t["a"], t["b"]))
            return random_projection_loss(T.softmax(h, axis=-1), seed=i)

        fd_check(loss, arrays)
