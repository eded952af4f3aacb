import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exmvit import tensor as T
from exmvit.tensor import NumericError, ShapeError, Tensor


def naive_conv2d(x, w, b, stride, padding):
    """Six-loop cross-correlation oracle (groups=1)."""
    bsz, cin, h, ww = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (ww + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo), dtype=np.float64)
    for n in range(bsz):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, ci, i * stride + u, j * stride + v] * w[co, ci, u, v]
                    out[n, co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_all_ones_sums_kernel(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = T.conv2d(x, w)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 9.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 1, 5, 7)).astype(np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        out = T.conv2d(x, w)
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        b = rng.normal(size=3).astype(np.float32)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        assert out.shape == (1, 3, 3, 3)
        expected = naive_conv2d(x, w, b, stride=2, padding=1)
        np.testing.assert_allclose(out.data, expected, atol=1e-5)

    def test_depthwise_equals_per_channel_oracle(self):
        rng = np.random.default_rng(2)
        c = 4
        x = rng.normal(size=(2, c, 6, 6)).astype(np.float32)
        w = rng.normal(size=(c, 1, 3, 3)).astype(np.float32)
        out = T.conv2d(Tensor(x), Tensor(w), stride=1, padding=1, groups=c)
        for ch in range(c):
            expected = naive_conv2d(x[:, ch : ch + 1], w[ch : ch + 1], None, 1, 1)
            np.testing.assert_allclose(out.data[:, ch : ch + 1], expected, atol=1e-5)

    def test_shape_errors(self):
        x = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((2, 2, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeError):
            T.conv2d(x, w)
        with pytest.raises(ShapeError):
            T.conv2d(x, Tensor(np.zeros((2, 3, 9, 9), dtype=np.float32)))


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
        out = T.linear(x, Tensor(np.eye(3, dtype=np.float32)), Tensor(np.zeros(3, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_case(self):
        x = Tensor(np.array([[1.0, 2.0]], dtype=np.float32))
        w = Tensor(np.array([[1.0, 1.0], [0.0, 1.0]], dtype=np.float32))
        out = T.linear(x, w, Tensor(np.zeros(2, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, [[3.0, 2.0]])

    def test_matches_naive_matmul(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 640)).astype(np.float32)
        w = rng.normal(size=(1000, 640)).astype(np.float32) * 0.05
        b = rng.normal(size=1000).astype(np.float32)
        out = T.linear(Tensor(x), Tensor(w), Tensor(b))
        expected = np.empty((4, 1000))
        for i in range(4):
            for j in range(1000):
                expected[i, j] = np.dot(x[i].astype(np.float64), w[j].astype(np.float64)) + b[j]
        np.testing.assert_allclose(out.data, expected, atol=1e-4)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            T.linear(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 4))))


class TestNorms:
    def test_batch_norm_passthrough_when_standardized(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(8, 3, 5, 5)).astype(np.float32)
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        out = T.batch_norm(
            Tensor(x),
            Tensor(np.ones(3, dtype=np.float32)),
            Tensor(np.zeros(3, dtype=np.float32)),
            np.zeros(3, dtype=np.float32),
            np.ones(3, dtype=np.float32),
            training=True,
            eps=1e-8,
        )
        np.testing.assert_allclose(out.data, x, atol=1e-5)

    def test_batch_norm_constant_input_zeros(self):
        x = np.full((2, 3, 4, 4), 7.0, dtype=np.float32)
        out = T.batch_norm(
            Tensor(x),
            Tensor(np.ones(3, dtype=np.float32)),
            Tensor(np.zeros(3, dtype=np.float32)),
            np.zeros(3, dtype=np.float32),
            np.ones(3, dtype=np.float32),
            training=True,
        )
        np.testing.assert_allclose(out.data, 0.0, atol=1e-4)

    def test_batch_norm_statistics(self):
        rng = np.random.default_rng(5)
        x = rng.normal(2.0, 3.0, size=(16, 4, 8, 8)).astype(np.float32)
        out = T.batch_norm(
            Tensor(x),
            Tensor(np.ones(4, dtype=np.float32)),
            Tensor(np.zeros(4, dtype=np.float32)),
            np.zeros(4, dtype=np.float32),
            np.ones(4, dtype=np.float32),
            training=True,
            eps=1e-8,
        )
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
        np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_batch_norm_rejects_bad_eps(self):
        x = Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            T.batch_norm(
                x,
                Tensor(np.ones(1)),
                Tensor(np.zeros(1)),
                np.zeros(1),
                np.ones(1),
                training=True,
                eps=0.0,
            )

    def test_layer_norm_single_dim_is_zero(self):
        x = Tensor(np.array([[3.0], [5.0]], dtype=np.float32))
        out = T.layer_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-2)

    def test_layer_norm_hand_case(self):
        x = Tensor(np.array([[1.0, 3.0]], dtype=np.float32))
        out = T.layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    def test_layer_norm_statistics(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(1.0, 2.0, size=(5, 64)).astype(np.float32))
        out = T.layer_norm(x, Tensor(np.ones(64)), Tensor(np.zeros(64)), eps=1e-10)
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-4)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-4)


class TestActivations:
    def test_relu(self):
        out = T.activation(Tensor(np.array([-1.0, 2.0], dtype=np.float32)), "relu")
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_silu_zero(self):
        assert T.activation(Tensor(np.array([0.0], dtype=np.float32)), "silu").item() == 0.0

    def test_silu_one(self):
        out = T.silu(Tensor(np.array([1.0], dtype=np.float64)))
        np.testing.assert_allclose(out.item(), 1.0 / (1.0 + np.exp(-1.0)), rtol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            T.activation(Tensor(np.zeros(1)), "gelu")


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor(np.array([0.0, 0.0], dtype=np.float32)))
        np.testing.assert_array_equal(out.data, [0.5, 0.5])

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 5)).astype(np.float32)
        a = T.softmax(Tensor(x)).data
        b = T.softmax(Tensor(x + 100.0)).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_direct_evaluation(self):
        x = np.array([1.0, 2.0, 3.0])
        out = T.softmax(Tensor(x))
        expected = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(out.data, expected, atol=1e-6)
        assert abs(out.data.sum() - 1.0) < 1e-6

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one(self, seed, cols):
        x = np.random.default_rng(seed).normal(0, 5, size=(4, cols)).astype(np.float32)
        out = T.softmax(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
        assert (out > 0).all() and (out < 1.0 + 1e-6).all()


class TestPatches:
    def test_unit_patch_is_reshape(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
        seq = T.unfold_patches(Tensor(x), 1, 1)
        assert seq.shape == (2, 16, 3)
        back = T.fold_patches(seq, 1, 1, x.shape)
        np.testing.assert_array_equal(back.data, x)

    def test_two_by_two_enumeration(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        seq = T.unfold_patches(x, 2, 2)
        assert seq.shape == (4, 1, 1)
        np.testing.assert_array_equal(seq.data.reshape(4), [1.0, 2.0, 3.0, 4.0])

    @given(
        st.integers(0, 2**32 - 1),
        st.sampled_from([1, 2, 4]),
        st.sampled_from([1, 2, 4]),
    )
    @settings(max_examples=25, deadline=None)
    def test_round_trip_bitwise(self, seed, ph, pw):
        x = np.random.default_rng(seed).normal(size=(2, 8, 16, 16)).astype(np.float32)
        seq = T.unfold_patches(Tensor(x), ph, pw)
        back = T.fold_patches(seq, ph, pw, x.shape)
        assert np.array_equal(back.data, x)

    def test_indivisible_rejected(self):
        with pytest.raises(ShapeError):
            T.unfold_patches(Tensor(np.zeros((1, 1, 5, 4), dtype=np.float32)), 2, 2)


class TestGlobalAvgPool:
    def test_constant(self):
        out = T.global_avg_pool(Tensor(np.full((2, 3, 4, 4), 1.5, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, np.full((2, 3), 1.5))

    def test_mean(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        assert T.global_avg_pool(x).item() == 2.5

    def test_unit_spatial_is_squeeze(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 5, 1, 1)).astype(np.float32)
        out = T.global_avg_pool(Tensor(x))
        np.testing.assert_array_equal(out.data, x[:, :, 0, 0])


class TestConcatChannels:
    def test_single_part_identity(self):
        x = Tensor(np.array([[1.0, 2.0]], dtype=np.float32))
        np.testing.assert_array_equal(T.concat_channels([x]).data, x.data)

    def test_order(self):
        a = Tensor(np.array([[1.0, 2.0]], dtype=np.float32))
        b = Tensor(np.array([[3.0]], dtype=np.float32))
        np.testing.assert_array_equal(T.concat_channels([a, b]).data, [[1.0, 2.0, 3.0]])

    def test_paper_widths(self):
        parts = [Tensor(np.zeros((2, w), dtype=np.float32)) for w in (32, 128, 480)]
        assert T.concat_channels(parts).shape == (2, 640)

    def test_errors(self):
        with pytest.raises(ShapeError):
            T.concat_channels([])
        with pytest.raises(ShapeError):
            T.concat_channels(
                [Tensor(np.zeros((1, 2), dtype=np.float32)), Tensor(np.zeros((2, 2), dtype=np.float32))]
            )


class TestAttention:
    def _weights(self, rng, d):
        return [Tensor(rng.normal(size=(d, d)).astype(np.float32) * 0.3) for _ in range(4)]

    def test_single_token_weight_is_one(self):
        rng = np.random.default_rng(10)
        d = 4
        wq, wk, wv, wo = self._weights(rng, d)
        x = rng.normal(size=(1, 1, d)).astype(np.float32)
        out = T.multi_head_attention(Tensor(x), wq, wk, wv, wo, heads=2)
        # with one token the softmax weight is exactly 1, so q/k are irrelevant
        expected = x[0] @ wv.data.T @ wo.data.T
        np.testing.assert_allclose(out.data[0], expected, atol=1e-5)

    def test_zero_input_zero_output(self):
        rng = np.random.default_rng(11)
        wq, wk, wv, wo = self._weights(rng, 4)
        x = Tensor(np.zeros((2, 3, 4), dtype=np.float32))
        out = T.multi_head_attention(x, wq, wk, wv, wo, heads=2)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_matches_naive_per_head_oracle(self):
        rng = np.random.default_rng(12)
        b, t, d, h = 1, 3, 4, 2
        hd = d // h
        wq, wk, wv, wo = self._weights(rng, d)
        x = rng.normal(size=(b, t, d)).astype(np.float32)
        out = T.multi_head_attention(Tensor(x), wq, wk, wv, wo, heads=h)

        q = x[0] @ wq.data.T
        k = x[0] @ wk.data.T
        v = x[0] @ wv.data.T
        merged = np.zeros((t, d))
        for head in range(h):
            sl = slice(head * hd, (head + 1) * hd)
            scores = q[:, sl] @ k[:, sl].T / np.sqrt(hd)
            e = np.exp(scores - scores.max(axis=-1, keepdims=True))
            att = e / e.sum(axis=-1, keepdims=True)
            merged[:, sl] = att @ v[:, sl]
        expected = merged @ wo.data.T
        np.testing.assert_allclose(out.data[0], expected, atol=1e-5)

    def test_head_divisibility(self):
        rng = np.random.default_rng(13)
        wq, wk, wv, wo = self._weights(rng, 4)
        with pytest.raises(ShapeError):
            T.multi_head_attention(Tensor(np.zeros((1, 2, 4), dtype=np.float32)), wq, wk, wv, wo, heads=3)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3), requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_half_square_gradient_is_input(self):
        x = Tensor(np.arange(5, dtype=np.float32), requires_grad=True)
        loss = T.mul(T.tsum(T.square(x)), Tensor(np.float32(0.5)))
        loss.backward()
        np.testing.assert_allclose(x.grad, x.data, atol=1e-6)

    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(ShapeError):
            x.backward()

    def test_composite_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        x0 = rng.normal(size=(2, 3)).astype(np.float64)
        w0 = rng.normal(size=(3, 3)).astype(np.float64)

        def loss_of(xv):
            x = Tensor(xv, requires_grad=True)
            w = Tensor(w0)
            y = T.silu(T.matmul(x, w))
            return T.tsum(T.mul(T.softmax(y), y)), x

        loss, x = loss_of(x0)
        loss.backward()
        h = 1e-6
        for idx in np.ndindex(x0.shape):
            up = x0.copy()
            up[idx] += h
            down = x0.copy()
            down[idx] -= h
            numeric = (loss_of(up)[0].item() - loss_of(down)[0].item()) / (2 * h)
            analytic = x.grad[idx]
            assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8) < 1e-3


class TestNumericGuards:
    def test_non_finite_is_an_error(self):
        x = Tensor(np.array([1.0], dtype=np.float32))
        with pytest.raises(NumericError):
            T.div(x, Tensor(np.array([0.0], dtype=np.float32)))

    def test_determinism(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(2, 4, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 4, 3, 3)).astype(np.float32)
        a = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        assert np.array_equal(a, b)
