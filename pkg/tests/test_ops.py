"""Tests for the elementary differentiable operations."""

import numpy as np
import pytest

from ffdconv import ops
from ffdconv.exceptions import DimensionError
from ffdconv.tensor import Parameter, Tape, Tensor

# =============================================================================
# Elementwise and reductions
# =============================================================================


class TestElementwise:
    """Tests for pointwise ops and name dispatch."""

    def test_relu(self):
        """Test relu clamps negatives to zero."""
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).numpy(), [0.0, 0.0, 2.0])

    def test_sigmoid_is_bounded(self):
        """Test sigmoid stays in [0, 1] for extreme inputs."""
        out = ops.sigmoid(Tensor([-800.0, 0.0, 800.0])).numpy()

        assert out[1] == pytest.approx(0.5)
        assert 0.0 <= out.min() and out.max() <= 1.0

    def test_broadcast_add(self):
        """Test add broadcasts a row across a matrix."""
        out = ops.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))

        np.testing.assert_array_equal(out.numpy(), [[1, 2, 3], [1, 2, 3]])

    def test_broadcast_gradient_is_summed(self):
        """Test the gradient of a broadcast operand is reduced to its shape."""
        b = Parameter("b", np.zeros(3))
        tape = Tape()
        tape.backward(ops.sum(ops.add(Tensor(np.ones((4, 3))), tape.param(b))))

        np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])

    def test_incompatible_shapes(self):
        """Test non-broadcastable operands raise DimensionError."""
        with pytest.raises(DimensionError):
            ops.mul(Tensor(np.ones(2)), Tensor(np.ones(3)))

    def test_dispatch_by_name(self):
        """Test elementwise() routes names including scale's factor."""
        x = Tensor([1.0, -1.0])

        np.testing.assert_allclose(ops.elementwise("scale", x, factor=3.0).numpy(), [3.0, -3.0])
        np.testing.assert_allclose(ops.elementwise("sub", x, x).numpy(), [0.0, 0.0])

    def test_unknown_name(self):
        """Test an unknown elementwise name is rejected."""
        with pytest.raises(ValueError):
            ops.elementwise("cosh", Tensor([1.0]))

    def test_mean(self):
        """Test mean over an axis."""
        out = ops.mean(Tensor([[1.0, 3.0], [5.0, 7.0]]), axis=1)

        np.testing.assert_allclose(out.numpy(), [2.0, 6.0])


class TestSoftmax:
    """Tests for softmax."""

    def test_known_values(self):
        """Test softmax([0, ln 2]) is [1/3, 2/3]."""
        out = ops.softmax(Tensor([0.0, np.log(2.0)])).numpy()

        np.testing.assert_allclose(out, [1 / 3, 2 / 3])

    def test_large_inputs_are_stable(self):
        """Test softmax([1000, 0]) stays finite."""
        out = ops.softmax(Tensor([1000.0, 0.0])).numpy()

        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)

    def test_rows_sum_to_one(self):
        """Test every row sums to one along the chosen axis."""
        x = Tensor(np.random.default_rng(0).standard_normal((3, 5)))

        np.testing.assert_allclose(ops.softmax(x, axis=1).numpy().sum(axis=1), np.ones(3))

    def test_invalid_axis(self):
        """Test an out-of-range axis is rejected."""
        with pytest.raises(DimensionError):
            ops.softmax(Tensor([1.0, 2.0]), axis=2)


class TestShapeOps:
    """Tests for reshape, transpose, flip and concat."""

    def test_reshape_mismatch(self):
        """Test reshaping to a different element count fails."""
        with pytest.raises(DimensionError):
            ops.reshape(Tensor(np.zeros(6)), (4, 2))

    def test_transpose_gradient(self):
        """Test transpose routes gradients back to the original layout."""
        x = Parameter("x", np.arange(6.0).reshape(2, 3))
        tape = Tape()
        seed = np.arange(6.0).reshape(3, 2)
        tape.backward(ops.transpose(tape.param(x), (1, 0)), seed)

        np.testing.assert_allclose(x.grad, seed.T)

    def test_flip(self):
        """Test flip reverses one axis."""
        np.testing.assert_array_equal(ops.flip(Tensor([[1.0, 2.0, 3.0]]), 1).numpy(), [[3, 2, 1]])

    def test_concat_splits_gradient(self):
        """Test concat hands each input its slice of the gradient."""
        a, b = Parameter("a", np.zeros(2)), Parameter("b", np.zeros(3))
        tape = Tape()
        out = ops.concat([tape.param(a), tape.param(b)], axis=0)
        tape.backward(out, np.arange(5.0))

        np.testing.assert_allclose(a.grad, [0.0, 1.0])
        np.testing.assert_allclose(b.grad, [2.0, 3.0, 4.0])


# =============================================================================
# Linear, convolution, pooling
# =============================================================================


class TestLinear:
    """Tests for the affine map."""

    def test_known_value(self):
        """Test x=[1,1], W=[[1,2]], b=[3] gives 6."""
        out = ops.linear(Tensor([[1.0, 1.0]]), Tensor([[1.0, 2.0]]), Tensor([3.0]))

        np.testing.assert_allclose(out.numpy(), [[6.0]])

    def test_inner_mismatch(self):
        """Test mismatched inner dimensions name the inner axis."""
        with pytest.raises(DimensionError) as exc:
            ops.linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))))
        assert exc.value.axis == "inner"

    def test_gradients(self):
        """Test dW = g.T @ x and db = sum(g)."""
        w = Parameter("w", np.array([[1.0, 2.0]]))
        b = Parameter("b", np.array([0.0]))
        tape = Tape()
        x = Tensor([[1.0, 3.0], [2.0, 5.0]])
        tape.backward(ops.sum(ops.linear(x, tape.param(w), tape.param(b))))

        np.testing.assert_allclose(w.grad, [[3.0, 8.0]])
        np.testing.assert_allclose(b.grad, [2.0])


class TestConv2d:
    """Tests for 2-D cross-correlation."""

    def test_one_by_one_kernel(self):
        """Test a 1x1 kernel of 2 doubles a 3x3 map of ones."""
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor([[[[2.0]]]]))

        np.testing.assert_allclose(out.numpy(), np.full((1, 1, 3, 3), 2.0))

    def test_kernel_is_not_flipped(self):
        """Test [[1,2],[3,4]] with [[1,0],[0,1]] gives 5."""
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
        w = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])[None, None])

        np.testing.assert_allclose(ops.conv2d(x, w).numpy(), [[[[5.0]]]])

    def test_padding_preserves_shape(self):
        """Test a 3x3 kernel with padding 1 keeps the spatial extent."""
        out = ops.conv2d(Tensor(np.ones((2, 3, 5, 7))), Tensor(np.ones((4, 3, 3, 3))), padding=1)

        assert out.shape == (2, 4, 5, 7)

    def test_stride(self):
        """Test stride 2 halves the output extent."""
        out = ops.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), stride=2)

        np.testing.assert_allclose(out.numpy(), np.full((1, 1, 2, 2), 4.0))

    def test_bias(self):
        """Test the bias is added per output channel."""
        out = ops.conv2d(
            Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((2, 1, 1, 1))), bias=Tensor([1.0, 2.0])
        )

        np.testing.assert_allclose(out.numpy()[0, :, 0, 0], [1.0, 2.0])

    def test_channel_mismatch(self):
        """Test an input/weight channel mismatch names the channel axis."""
        with pytest.raises(DimensionError) as exc:
            ops.conv2d(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 3, 1, 1))))
        assert exc.value.axis == "channel"

    def test_kernel_larger_than_input(self):
        """Test a kernel that does not fit the padded input is rejected."""
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))

    def test_weight_gradient_of_sum(self):
        """Test d sum(conv(x, w)) / dw counts each window's input sum."""
        w = Parameter("w", np.zeros((1, 1, 1, 1)))
        tape = Tape()
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        tape.backward(ops.sum(ops.conv2d(x, tape.param(w))))

        np.testing.assert_allclose(w.grad, [[[[6.0]]]])


class TestPooling:
    """Tests for average and max pooling."""

    def test_average(self):
        """Test avg pooling of [[1,3],[5,7]] is 4."""
        x = Tensor(np.array([[1.0, 3.0], [5.0, 7.0]])[None, None])

        np.testing.assert_allclose(ops.pool2d(x, "avg", 2).numpy(), [[[[4.0]]]])

    def test_max(self):
        """Test max pooling of [[1,3],[5,7]] is 7 and routes the gradient there."""
        x = Parameter("x", np.array([[1.0, 3.0], [5.0, 7.0]])[None, None])
        tape = Tape()
        out = ops.pool2d(tape.param(x), "max", 2)
        tape.backward(out)

        np.testing.assert_allclose(out.numpy(), [[[[7.0]]]])
        np.testing.assert_allclose(x.grad[0, 0], [[0.0, 0.0], [0.0, 1.0]])

    def test_rectangular_window(self):
        """Test separate time and frequency windows."""
        out = ops.pool2d(Tensor(np.ones((1, 2, 8, 6))), "avg", (2, 3))

        assert out.shape == (1, 2, 4, 2)

    def test_unknown_mode(self):
        """Test an unknown pooling mode is rejected."""
        with pytest.raises(ValueError):
            ops.pool2d(Tensor(np.ones((1, 1, 2, 2))), "median", 2)

    def test_window_too_large(self):
        """Test a window beyond the input extent names the axis."""
        with pytest.raises(DimensionError) as exc:
            ops.pool2d(Tensor(np.ones((1, 1, 4, 2))), "avg", (2, 4))
        assert exc.value.axis == "frequency"

    def test_global_average(self):
        """Test global pooling collapses time and frequency."""
        x = Tensor(np.arange(8.0).reshape(1, 2, 2, 2))

        np.testing.assert_allclose(ops.global_avg_pool(x).numpy(), [[1.5, 5.5]])


class TestBatchNorm:
    """Tests for batch normalisation."""

    def test_training_normalises_and_updates_buffers(self):
        """Test batch statistics are used and the running buffers move by the momentum."""
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(3.0, 2.0, size=(4, 2, 5, 5)))
        running_mean, running_var = np.zeros(2), np.ones(2)
        out = ops.batch_norm(
            x, Tensor(np.ones(2)), Tensor(np.zeros(2)), running_mean, running_var, training=True
        )

        np.testing.assert_allclose(out.numpy().mean(axis=(0, 2, 3)), [0.0, 0.0], atol=1e-10)
        expected = 0.1 * x.numpy().mean(axis=(0, 2, 3))
        np.testing.assert_allclose(running_mean, expected)

    def test_eval_uses_running_statistics(self):
        """Test evaluation mode applies the stored mean and variance."""
        x = Tensor(np.full((1, 1, 2, 2), 5.0))
        out = ops.batch_norm(
            x, Tensor([2.0]), Tensor([1.0]), np.array([1.0]), np.array([4.0]), training=False
        )

        expected = 1.0 + 2.0 * 4.0 / np.sqrt(4.0 + 1e-5)
        np.testing.assert_allclose(out.numpy(), np.full((1, 1, 2, 2), expected))

    def test_affine_shape_mismatch(self):
        """Test gamma/beta must have one entry per channel."""
        with pytest.raises(DimensionError):
            ops.batch_norm(
                Tensor(np.ones((1, 2, 2, 2))),
                Tensor(np.ones(3)),
                Tensor(np.zeros(3)),
                np.zeros(2),
                np.ones(2),
                training=True,
            )
