import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidground.numerics import (
    DimensionError,
    Tensor,
    attention,
    check_gradients,
    conv1d,
    depthwise_conv1d,
    layernorm,
    mac_count,
    masked_softmax,
    matmul,
    no_grad,
    ops,
    parameter,
    softmax,
    trace_macs,
)


def rand_param(rng, *shape):
    return parameter(rng.standard_normal(shape))


def weighted_sum(t, w):
    return (t * w).sum()


class TestMatmul:
    def test_identity(self):
        a = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(matmul(Tensor(np.eye(3)), Tensor(a)).data, a)

    def test_small_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_gradient(self):
        rng = np.random.default_rng(1)
        a, b = rand_param(rng, 4, 5), rand_param(rng, 5, 2)
        assert check_gradients(lambda: matmul(a, b).sum(), [a, b]) < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_no_overflow(self):
        out = softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        x = rand_param(rng, 3, 5)
        w = rng.standard_normal((3, 5))
        assert check_gradients(lambda: weighted_sum(softmax(x, axis=-1), w), [x]) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 10**6))
    def test_rows_sum_to_one(self, rows, cols, seed):
        x = np.random.default_rng(seed).normal(scale=30.0, size=(rows, cols))
        np.testing.assert_allclose(softmax(Tensor(x)).data.sum(axis=-1), 1.0, atol=1e-9)

    def test_masked_entries_are_exactly_zero(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
        mask = np.array([[1, 0, 1, 1], [0, 0, 0, 0], [1, 1, 1, 0]], dtype=bool)
        out = masked_softmax(x, mask).data
        assert np.all(out[~mask] == 0.0)
        np.testing.assert_array_equal(out[1], np.zeros(4))
        np.testing.assert_allclose(out[[0, 2]].sum(axis=-1), 1.0, atol=1e-12)


class TestLayerNorm:
    def test_constant_row_normalises_to_zero(self):
        out = layernorm(Tensor(np.full((2, 5), 3.7)), parameter(np.ones(5)), parameter(np.zeros(5)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_moments(self):
        out = layernorm(Tensor([[1.0, 2.0, 3.0]])).data
        assert abs(out.mean()) < 1e-4
        assert abs(out.var() - 1.0) < 1e-4

    def test_gradient(self):
        rng = np.random.default_rng(3)
        x, g, b = rand_param(rng, 4, 6), rand_param(rng, 6), rand_param(rng, 6)
        w = rng.standard_normal((4, 6))
        assert check_gradients(lambda: weighted_sum(layernorm(x, g, b), w), [x, g, b]) < 1e-6


class TestConv1d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((7, 1))
        w = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
        np.testing.assert_array_equal(conv1d(Tensor(x), Tensor(w)).data, x)

    def test_stride_two_length(self):
        out = conv1d(Tensor(np.ones((8, 2))), Tensor(np.ones((3, 2, 4))), stride=2)
        assert out.shape == (4, 4)

    @pytest.mark.parametrize("T,stride", [(1, 1), (5, 2), (9, 2), (16, 4), (7, 3)])
    def test_same_padding_shape_rule(self, T, stride):
        out = conv1d(Tensor(np.ones((T, 2))), Tensor(np.ones((5, 2, 3))), stride=stride)
        assert out.shape == (-(-T // stride), 3)

    def test_empty_input(self):
        with pytest.raises(DimensionError):
            conv1d(Tensor(np.zeros((0, 2))), Tensor(np.zeros((3, 2, 2))))

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient(self, stride):
        rng = np.random.default_rng(4 + stride)
        x, w, b = rand_param(rng, 8, 3), rand_param(rng, 3, 3, 2), rand_param(rng, 2)
        target = rng.standard_normal((-(-8 // stride), 2))
        assert check_gradients(lambda: weighted_sum(conv1d(x, w, b, stride), target), [x, w, b]) < 1e-6

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(5)
        x, w = rng.standard_normal((6, 2)), rng.standard_normal((3, 2, 3))
        xp = np.pad(x, ((1, 1), (0, 0)))
        ref = np.array([[sum(xp[t + j] @ w[j][:, c] for j in range(3)) for c in range(3)] for t in range(6)])
        np.testing.assert_allclose(conv1d(Tensor(x), Tensor(w)).data, ref, atol=1e-12)

    def test_depthwise_gradient(self):
        rng = np.random.default_rng(6)
        x, w, b = rand_param(rng, 9, 4), rand_param(rng, 3, 4), rand_param(rng, 4)
        target = rng.standard_normal((5, 4))
        assert check_gradients(lambda: weighted_sum(depthwise_conv1d(x, w, b, 2), target), [x, w, b]) < 1e-6


class TestAttention:
    def test_single_key_returns_value(self):
        rng = np.random.default_rng(0)
        q = Tensor(rng.standard_normal((1, 4)))
        v = Tensor(rng.standard_normal((1, 4)))
        np.testing.assert_allclose(attention(q, q, v, heads=2).data, v.data, atol=1e-15)

    def test_window_one_is_local(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((6, 6)))
        values = Tensor(np.eye(6))
        out = attention(x, x, values, heads=1, window=1).data
        np.testing.assert_allclose(out, np.eye(6), atol=1e-15)

    def test_window_matches_banded_mask(self):
        rng = np.random.default_rng(2)
        q, k, v = (Tensor(rng.standard_normal((7, 8))) for _ in range(3))
        idx = np.arange(7)
        band = np.abs(idx[:, None] - idx[None, :]) <= 2
        np.testing.assert_allclose(attention(q, k, v, heads=2, window=5).data,
                                   attention(q, k, v, heads=2, mask=band).data, atol=1e-13)

    def test_fully_masked_rows_are_zero(self):
        rng = np.random.default_rng(3)
        q, k, v = (Tensor(rng.standard_normal((3, 4))) for _ in range(3))
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 1] = True
        out = attention(q, k, v, heads=1, mask=mask).data
        np.testing.assert_array_equal(out[1:], 0.0)
        np.testing.assert_allclose(out[0], v.data[1])

    @pytest.mark.parametrize("window", [None, 3])
    def test_gradient(self, window):
        rng = np.random.default_rng(7)
        q, k, v = rand_param(rng, 6, 8), rand_param(rng, 6, 8), rand_param(rng, 6, 8)
        w = rng.standard_normal((6, 8))
        err = check_gradients(lambda: weighted_sum(attention(q, k, v, heads=2, window=window), w), [q, k, v])
        assert err < 1e-5

    def test_heads_must_divide(self):
        x = Tensor(np.zeros((2, 6)))
        with pytest.raises(DimensionError):
            attention(x, x, x, heads=4)


class TestMacCount:
    def test_matmul(self):
        with trace_macs() as tr:
            matmul(Tensor(np.ones((4, 5))), Tensor(np.ones((5, 2))))
        assert mac_count(tr) == 40

    def test_conv1d(self):
        with trace_macs() as tr:
            conv1d(Tensor(np.ones((8, 2))), Tensor(np.ones((3, 2, 2))))
        assert mac_count(tr) == 96

    def test_batched_matmul(self):
        with trace_macs() as tr:
            matmul(Tensor(np.ones((3, 4, 5))), Tensor(np.ones((3, 5, 2))))
        assert tr.total == 3 * 40

    def test_elementwise_free_and_nested_traces(self):
        with trace_macs() as outer:
            with trace_macs() as inner:
                matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
            ops.add(Tensor(np.ones(3)), Tensor(np.ones(3)))
        assert inner.total == 8 and outer.total == 8

    def test_windowed_attention_is_linear_in_length(self):
        def cost(T):
            x = Tensor(np.ones((T, 8)))
            with trace_macs() as tr:
                attention(x, x, x, heads=2, window=5)
            return tr.total
        assert cost(32) == 2 * cost(16) == 2 * 16 * 8 * 5 * 2


class TestAutodiff:
    def test_shared_subexpression_accumulates(self):
        x = parameter([2.0, 3.0])
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_no_grad_records_nothing(self):
        x = parameter([1.0])
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad and y._parents == ()

    def test_deterministic_forward(self):
        rng = np.random.default_rng(9)
        q, k, v = (Tensor(rng.standard_normal((11, 8))) for _ in range(3))
        a = attention(q, k, v, heads=2, window=5).data
        b = attention(q, k, v, heads=2, window=5).data
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("name", ["gelu", "softplus", "sigmoid", "exp"])
    def test_unary_gradients(self, name):
        rng = np.random.default_rng(11)
        x = rand_param(rng, 5, 3)
        w = rng.standard_normal((5, 3))
        fn = getattr(ops, name)
        assert check_gradients(lambda: weighted_sum(fn(x), w), [x]) < 1e-5

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(12)
        a, b = rand_param(rng, 4, 3), rand_param(rng, 3)
        w = rng.standard_normal((4, 3))
        assert check_gradients(lambda: weighted_sum(a * b + b / (a * a + 1.0), w), [a, b]) < 1e-5

    def test_getitem_concat_reduce(self):
        rng = np.random.default_rng(13)
        a = rand_param(rng, 6, 4)
        w = rng.standard_normal(4)
        def f():
            parts = ops.concat([a[1:3], a[np.array([0, 0, 5])]], axis=0)
            return (ops.mean(parts, axis=0) * w).sum() + ops.maximum(a, 0.1).sum()
        assert check_gradients(f, [a]) < 1e-5
