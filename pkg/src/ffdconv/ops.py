"""Elementary differentiable operations on `Tensor`.

Convolution follows the deep-learning cross-correlation convention: the kernel
is not flipped.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .config import BATCH_NORM_EPS, BATCH_NORM_MOMENTUM
from .exceptions import DimensionError
from .tensor import Tensor, as_tensor, emit

IntPair = tuple[int, int]


def _pair(value: int | Sequence[int]) -> IntPair:
    if isinstance(value, int):
        return (value, value)
    first, second = value
    return (int(first), int(second))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} are not broadcastable")


# -----------------------------------------------------------------------------
# Elementwise
# -----------------------------------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        sa, sb = saved
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return emit("add", (a, b), a.data + b.data, vjp, (a.shape, b.shape))


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        sa, sb = saved
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return emit("sub", (a, b), a.data - b.data, vjp, (a.shape, b.shape))


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        x, y = saved
        return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    return emit("mul", (a, b), a.data * b.data, vjp, (a.data, b.data))


def scale(x: Any, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    return emit(
        "scale", (x,), x.data * x.dtype.type(factor), lambda g, s: (g * s[0],), (factor,)
    )


def relu(x: Any) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return emit("relu", (x,), out, lambda g, s: (g * s[0],), (mask,))


def sigmoid(x: Any) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data).astype(x.dtype, copy=False)
    return emit("sigmoid", (x,), y, lambda g, s: (g * s[0] * (1 - s[0]),), (y,))


def tanh(x: Any) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return emit("tanh", (x,), y, lambda g, s: (g * (1 - s[0] * s[0]),), (y,))


ELEMENTWISE_OPS = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
}


def elementwise(op: str, *operands: Any, factor: float | None = None) -> Tensor:
    """Dispatch by name: relu, sigmoid, tanh, add, sub, mul, scale."""
    func = ELEMENTWISE_OPS.get(op)
    if func is None:
        raise ValueError(f"Unknown elementwise op '{op}' (expected one of {list(ELEMENTWISE_OPS)})")
    if op == "scale":
        return scale(operands[0], 1.0 if factor is None else factor)
    return func(*operands)


# -----------------------------------------------------------------------------
# Shape and reductions
# -----------------------------------------------------------------------------


def reshape(x: Any, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}")
    return emit("reshape", (x,), out, lambda g, s: (g.reshape(s[0]),), (x.shape,))


def transpose(x: Any, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return emit("transpose", (x,), out, lambda g, s: (g.transpose(s[0]),), (inverse,))


def flip(x: Any, axis: int) -> Tensor:
    x = as_tensor(x)
    out = np.flip(x.data, axis=axis)
    return emit("flip", (x,), out, lambda g, s: (np.flip(g, axis=s[0]),), (axis,))


def concat(tensors: Sequence[Any], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"cannot concatenate along axis {axis}: {e}", axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g: np.ndarray, saved: tuple) -> list:
        return np.split(g, saved[0], axis=saved[1])

    return emit("concat", tensors, out, vjp, (bounds, axis))


def sum(  # noqa: A001
    x: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False
) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        shape, ax, keep = saved
        if ax is not None and not keep:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return emit("sum", (x,), out, vjp, (x.shape, axis, keepdims))


def mean(x: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = range(x.ndim) if axis is None else ((axis,) if isinstance(axis, int) else axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x: Any, axis: int = -1) -> Tensor:
    """Softmax along `axis`, computed with max subtraction."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}", axis=axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    y = exp / exp.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        out, ax = saved
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return emit("softmax", (x,), y, vjp, (y, axis))


# -----------------------------------------------------------------------------
# Linear and convolution
# -----------------------------------------------------------------------------


def linear(x: Any, weight: Any, bias: Any | None = None) -> Tensor:
    """Affine map x @ W.T + b for x [B, N], W [M, N], b [M]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"linear expects 2-D input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"inner dimension mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}",
            axis="inner",
        )
    out = x.data @ weight.data.T
    inputs: list[Tensor] = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({weight.shape[0]},)", axis="bias")
        out = out + bias.data
        inputs.append(bias)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        xd, wd, has_bias = saved
        grads = [g @ wd, g.T @ xd]
        if has_bias:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return emit("linear", inputs, out, vjp, (x.data, weight.data, bias is not None))


def _windows(
    padded: np.ndarray, kernel: IntPair, stride: IntPair
) -> np.ndarray:
    """Strided view [B, C, T', F', kT, kF] of all kernel placements."""
    view = sliding_window_view(padded, kernel, axis=(2, 3))
    return view[:, :, :: stride[0], :: stride[1]]


def _scatter_windows(
    target: np.ndarray, cols: np.ndarray, stride: IntPair
) -> None:
    """Add window-shaped gradients cols [B, C, T', F', kT, kF] back into target."""
    _, _, out_t, out_f, k_t, k_f = cols.shape
    for i in range(k_t):
        for j in range(k_f):
            target[
                :, :, i : i + stride[0] * out_t : stride[0], j : j + stride[1] * out_f : stride[1]
            ] += cols[:, :, :, :, i, j]


def conv2d(
    input: Any,
    weight: Any,
    stride: int | Sequence[int] = 1,
    padding: int | Sequence[int] = 0,
    bias: Any | None = None,
) -> Tensor:
    """2-D cross-correlation of [B, C_in, T, F] with [C_out, C_in, kT, kF]."""
    x, w = as_tensor(input), as_tensor(weight)
    stride, padding = _pair(stride), _pair(padding)
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-D [B,C,T,F], got {x.shape}", axis="input")
    if w.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-D, got {w.shape}", axis="weight")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"channel mismatch: input has {x.shape[1]} channels, weight expects {w.shape[1]}",
            axis="channel",
        )
    if min(stride) < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}", axis="stride")
    for axis, name in ((2, "time"), (3, "frequency")):
        padded = x.shape[axis] + 2 * padding[axis - 2]
        if w.shape[axis] > padded:
            raise DimensionError(
                f"kernel extent {w.shape[axis]} exceeds padded {name} extent {padded}", axis=name
            )

    pad_t, pad_f = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_t, pad_t), (pad_f, pad_f)))
    cols = _windows(xp, w.shape[2:], stride)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    inputs: list[Tensor] = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (w.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({w.shape[0]},)", axis="bias")
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)
    out = np.ascontiguousarray(out)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        cols, wd, xp_shape, pads, strides, has_bias = saved
        grad_w = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        grad_cols = np.tensordot(g, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        grad_xp = np.zeros(xp_shape, dtype=g.dtype)
        _scatter_windows(grad_xp, grad_cols, strides)
        pt, pf = pads
        grad_x = grad_xp[:, :, pt : xp_shape[2] - pt, pf : xp_shape[3] - pf]
        grads = [grad_x, grad_w]
        if has_bias:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    saved = (cols, w.data, xp.shape, padding, stride, bias is not None)
    return emit("conv2d", inputs, out, vjp, saved)


def pool2d(
    x: Any,
    mode: str,
    window: int | Sequence[int],
    stride: int | Sequence[int] | None = None,
) -> Tensor:
    """Average or max pooling over (time, frequency) of [B, C, T, F]."""
    x = as_tensor(x)
    window = _pair(window)
    stride = window if stride is None else _pair(stride)
    if mode not in ("avg", "max"):
        raise ValueError(f"Unknown pooling mode '{mode}' (expected 'avg' or 'max')")
    if x.ndim != 4:
        raise DimensionError(f"pool2d input must be 4-D [B,C,T,F], got {x.shape}", axis="input")
    for axis, name in ((2, "time"), (3, "frequency")):
        if window[axis - 2] > x.shape[axis]:
            raise DimensionError(
                f"pool window {window[axis - 2]} exceeds {name} extent {x.shape[axis]}", axis=name
            )
    cols = _windows(x.data, window, stride)
    if mode == "avg":
        out = cols.mean(axis=(4, 5))

        def vjp(g: np.ndarray, saved: tuple) -> tuple:
            shape, win, strides = saved
            spread = np.broadcast_to(
                (g / (win[0] * win[1]))[..., None, None], g.shape + win
            )
            grad = np.zeros(shape, dtype=g.dtype)
            _scatter_windows(grad, spread, strides)
            return (grad,)

        return emit("avg_pool2d", (x,), np.ascontiguousarray(out), vjp, (x.shape, window, stride))

    flat = cols.reshape(cols.shape[:4] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def max_vjp(g: np.ndarray, saved: tuple) -> tuple:
        shape, win, strides, argmax = saved
        onehot = np.zeros(g.shape + (win[0] * win[1],), dtype=g.dtype)
        np.put_along_axis(onehot, argmax[..., None], g[..., None], axis=-1)
        grad = np.zeros(shape, dtype=g.dtype)
        _scatter_windows(grad, onehot.reshape(g.shape + win), strides)
        return (grad,)

    saved = (x.shape, window, stride, arg)
    return emit("max_pool2d", (x,), np.ascontiguousarray(out), max_vjp, saved)


def global_avg_pool(x: Any) -> Tensor:
    """Average over the full (time, frequency) extent: [B, C, T, F] -> [B, C]."""
    x = as_tensor(x)
    pooled = pool2d(x, "avg", (x.shape[2], x.shape[3]))
    return reshape(pooled, (x.shape[0], x.shape[1]))


# -----------------------------------------------------------------------------
# Normalisation
# -----------------------------------------------------------------------------


def batch_norm(
    x: Any,
    gamma: Any,
    beta: Any,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BATCH_NORM_MOMENTUM,
    eps: float = BATCH_NORM_EPS,
) -> Tensor:
    """Per-channel batch normalisation of [B, C, T, F].

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"batch_norm affine shapes {gamma.shape}/{beta.shape} != ({channels},)", axis="channel"
        )
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.size // channels
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = (xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]).astype(x.dtype)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        xh, istd, gam, train = saved
        grad_gamma = (g * xh).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        gxhat = g * gam[None, :, None, None]
        if train:
            n = g.size // g.shape[1]
            grad_x = (
                istd[None, :, None, None]
                / n
                * (
                    n * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xh * (gxhat * xh).sum(axis=axes, keepdims=True)
                )
            )
        else:
            grad_x = gxhat * istd[None, :, None, None]
        return grad_x, grad_gamma, grad_beta

    return emit("batch_norm", (x, gamma, beta), out, vjp, (xhat, inv_std, gamma.data, training))
