import numpy as np
import pytest

from shadowlab.numerics.tensor import (
    ShapeError,
    TapeConsumedError,
    Tensor,
    backward,
    clip,
    concat,
    conv2d,
    exp,
    group_norm,
    log,
    matmul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    silu,
    sqrt,
    tmean,
    tsum,
    upsample2x,
)
from shadowlab.numerics.tensor import _conv_im2col, _conv_s1
from shadowlab.numerics.gradcheck import grad_check


def t(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestBasics:
    def test_float64_everywhere(self):
        x = Tensor(np.ones((2, 2), dtype=np.float32))
        assert x.data.dtype == np.float64

    def test_scalar_backward_fills_leaf_grads(self):
        x = t([1.0, 2.0, 3.0])
        backward(tsum(x * x))
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_backward_requires_scalar(self):
        x = t([1.0, 2.0])
        with pytest.raises(ShapeError):
            backward(x * x)

    def test_tape_is_single_shot(self):
        x = t([1.0, 2.0])
        y = tsum(x * x)
        backward(y)
        with pytest.raises(TapeConsumedError):
            backward(y)

    def test_no_grad_records_nothing(self):
        x = t([1.0, 2.0])
        with no_grad():
            y = tsum(x * x)
        with pytest.raises(RuntimeError, match="not produced by recorded"):
            backward(y)

    def test_grad_accumulates_across_uses(self):
        x = t([3.0])
        y = x * x + x * x
        backward(tsum(y))
        np.testing.assert_allclose(x.grad, [12.0])

    def test_broadcast_unbroadcasts_gradient(self):
        x = t(np.ones((2, 3)))
        b = t(np.ones((1, 3)))
        backward(tsum(x + b))
        assert b.grad.shape == (1, 3)
        np.testing.assert_allclose(b.grad, np.full((1, 3), 2.0))


class TestGradChecks:
    def test_elementwise_chain(self):
        rng = np.random.default_rng(0)
        x = t(rng.standard_normal((4, 5)))

        def f(v):
            return tsum(silu(v) * sigmoid(v) + exp(v * 0.1) - log(clip(v * v + 1.0, 0.5, 50.0)))

        assert grad_check(f, x) < 1e-6

    def test_sqrt_relu_mean(self):
        rng = np.random.default_rng(1)
        x = t(rng.random((3, 4)) + 0.5)

        def f(v):
            return tmean(sqrt(v) + relu(v - 1.0))

        assert grad_check(f, x) < 1e-6

    def test_matmul(self):
        rng = np.random.default_rng(2)
        a = t(rng.standard_normal((3, 4)))
        b = rng.standard_normal((4, 2))

        def f(v):
            return tsum(matmul(v, Tensor(b)) ** 2)

        assert grad_check(f, a) < 1e-6

    def test_concat_reshape_upsample(self):
        rng = np.random.default_rng(3)
        x = t(rng.standard_normal((1, 2, 3, 3)))

        def f(v):
            u = upsample2x(v)
            c = concat((u, u * 2.0), axis=1)
            return tsum(reshape(c, (-1,)) ** 2)

        assert grad_check(f, x) < 1e-6

    def test_group_norm_x_and_params(self):
        rng = np.random.default_rng(4)
        x = t(rng.standard_normal((2, 4, 3, 3)))
        gamma = t(rng.standard_normal(4) * 0.2 + 1.0)
        beta = t(rng.standard_normal(4) * 0.1)

        def fx(v):
            return tsum(group_norm(v, Tensor(gamma.data), Tensor(beta.data), groups=2) ** 2)

        def fg(v):
            return tsum(group_norm(Tensor(x.data), v, Tensor(beta.data), groups=2) ** 2)

        assert grad_check(fx, t(x.data.copy())) < 1e-5
        assert grad_check(fg, t(gamma.data.copy())) < 1e-6


class TestConv:
    @pytest.mark.parametrize("stride,padding,k", [(1, 1, 3), (1, 0, 3), (1, 2, 5), (2, 1, 3), (2, 0, 1)])
    def test_grad_all_paths(self, stride, padding, k):
        rng = np.random.default_rng(5)
        x = t(rng.standard_normal((2, 3, 8, 8)))
        w = t(rng.standard_normal((4, 3, k, k)) * 0.3)
        b = t(rng.standard_normal(4) * 0.1)

        def fx(v):
            return tsum(conv2d(v, Tensor(w.data), Tensor(b.data), stride, padding) ** 2)

        def fw(v):
            return tsum(conv2d(Tensor(x.data), v, Tensor(b.data), stride, padding) ** 2)

        assert grad_check(fx, t(x.data.copy())) < 1e-6
        assert grad_check(fw, t(w.data.copy())) < 1e-6

    def test_stride1_and_im2col_paths_agree(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((2, 5, 9, 7)))
        w = Tensor(rng.standard_normal((3, 5, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        fast = _conv_s1(x, w, b, 1)
        slow = _conv_im2col(x, w, b, 1, 1)
        np.testing.assert_allclose(fast.data, slow.data, atol=1e-13)

    def test_oracle_tiny_case(self):
        x = Tensor(np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3))
        w = Tensor(np.ones((1, 1, 2, 2)))
        out = conv2d(x, w, stride=1, padding=0)
        expect = np.array([[0 + 1 + 3 + 4, 1 + 2 + 4 + 5], [3 + 4 + 6 + 7, 4 + 5 + 7 + 8]], dtype=np.float64)
        np.testing.assert_array_equal(out.data[0, 0], expect)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))

    def test_kernel_larger_than_input_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestShapes:
    def test_concat_axis(self):
        a = Tensor(np.ones((1, 2)))
        b = Tensor(np.zeros((1, 2)))
        c = concat((a, b), axis=0)
        assert c.shape == (2, 2)

    def test_upsample2x_repeats(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        up = upsample2x(x)
        np.testing.assert_array_equal(
            up.data[0, 0],
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_tsum_axis_tuple(self):
        x = Tensor(np.ones((2, 3, 4)))
        s = tsum(x, axis=(0, 2))
        np.testing.assert_array_equal(s.data, [8.0, 8.0, 8.0])
