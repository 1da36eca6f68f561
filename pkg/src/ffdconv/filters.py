"""Spatial and channel filter generation for dynamic blocks.

Spatial branch: a convolution whose kernel spans the full extent of one axis
(all frames for frequency banks, all bands for time banks, 1x1 for per-pixel
banks) and slides along the other, mapping C channels to K*K taps. Rows are
then softmax-constrained at a temperature and standardized by Filter-Norm.

Channel branch: global average pool, two fully connected layers with a ReLU
bottleneck, reshape to [B, C, K*K], Filter-Norm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import FILTER_AXES, FILTER_NORM_EPS
from .ddf import ChannelFilterBank, SpatialFilterBank
from .exceptions import DimensionError
from .ops import conv2d, global_avg_pool, linear, relu, reshape, scale, softmax, transpose
from .tensor import Parameter, Tape, Tensor, as_tensor, bind, emit

logger = logging.getLogger(__name__)


@dataclass
class SpatialGenParams:
    """Generating conv for one spatial bank.

    weight is [K*K, C, T, W] for frequency banks, [K*K, C, W, F] for time banks
    and [K*K, C, 1, 1] for per-pixel banks.
    """

    axis: str
    kernel_size: int
    window: int
    weight: Parameter
    bias: Parameter
    gain: Parameter
    temperature: float = 1.0
    use_attention: bool = True

    def __post_init__(self) -> None:
        if self.axis not in FILTER_AXES:
            raise DimensionError(f"Unknown filter axis '{self.axis}'", axis="axis")
        if self.window % 2 == 0:
            raise DimensionError(f"window must be odd, got {self.window}", axis="window")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def create(
        cls,
        prefix: str,
        axis: str,
        channels: int,
        kernel_size: int,
        window: int,
        rng: np.random.Generator,
        *,
        frames: int | None = None,
        bands: int | None = None,
        use_attention: bool = True,
        dtype: str = "float32",
    ) -> SpatialGenParams:
        """Initialise a generating conv sized for the given input extents."""
        taps = kernel_size * kernel_size
        if axis == "frequency":
            extent = (frames, window)
        elif axis == "time":
            extent = (window, bands)
        else:
            extent = (1, 1)
        if None in extent:
            raise DimensionError(f"{axis} banks need the full extent of the other axis", axis=axis)
        shape = (taps, channels) + extent
        fan_in = channels * extent[0] * extent[1]
        return cls(
            axis=axis,
            kernel_size=kernel_size,
            window=window,
            weight=Parameter.kaiming(f"{prefix}.weight", shape, fan_in, rng, dtype),
            bias=Parameter.zeros(f"{prefix}.bias", (taps,), dtype),
            gain=Parameter.full(f"{prefix}.gain", (1,), 1.0, dtype),
            use_attention=use_attention,
        )

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias, self.gain]


@dataclass
class ChannelGenParams:
    """Squeeze-style bottleneck C -> C/r -> C*K*K."""

    kernel_size: int
    reduction: int
    fc1_weight: Parameter
    fc1_bias: Parameter
    fc2_weight: Parameter
    fc2_bias: Parameter
    gain: Parameter

    @classmethod
    def create(
        cls,
        prefix: str,
        channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        *,
        reduction: int = 4,
        dtype: str = "float32",
    ) -> ChannelGenParams:
        hidden = max(1, channels // reduction)
        taps = kernel_size * kernel_size
        return cls(
            kernel_size=kernel_size,
            reduction=reduction,
            fc1_weight=Parameter.kaiming(
                f"{prefix}.fc1.weight", (hidden, channels), channels, rng, dtype
            ),
            fc1_bias=Parameter.zeros(f"{prefix}.fc1.bias", (hidden,), dtype),
            fc2_weight=Parameter.kaiming(
                f"{prefix}.fc2.weight", (channels * taps, hidden), hidden, rng, dtype
            ),
            fc2_bias=Parameter.zeros(f"{prefix}.fc2.bias", (channels * taps,), dtype),
            gain=Parameter.full(f"{prefix}.gain", (1,), 1.0, dtype),
        )

    @property
    def channels(self) -> int:
        return self.fc1_weight.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.fc1_weight, self.fc1_bias, self.fc2_weight, self.fc2_bias, self.gain]


# -----------------------------------------------------------------------------
# Row constraints
# -----------------------------------------------------------------------------


def attention_constrain(filters: Tensor | np.ndarray, temperature: float) -> Tensor:
    """Row-wise softmax(filters / temperature) over the last axis."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return softmax(scale(as_tensor(filters), 1.0 / temperature), axis=-1)


def filter_norm(filters: Tensor | np.ndarray, gain: Tensor | np.ndarray) -> Tensor:
    """Standardize each row over its last axis, then multiply by `gain`.

    Uses the population std plus FILTER_NORM_EPS, so constant rows map to zero.
    """
    x, g = as_tensor(filters), as_tensor(gain)
    if x.shape[-1] < 2:
        raise DimensionError("filter_norm needs at least two taps per row", axis="kernel")
    n = x.shape[-1]
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    std = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    denom = std + FILTER_NORM_EPS
    normalized = centered / denom
    out = normalized * g.data

    def vjp(grad: np.ndarray, saved: tuple) -> tuple:
        xc, sd, den, xhat, gain_value = saved
        grad_gain = np.atleast_1d((grad * xhat).sum()).reshape(gain_value.shape)
        gh = grad * gain_value
        dot = (gh * xc).sum(axis=-1, keepdims=True)
        coupling = np.divide(dot, n * sd * den * den, out=np.zeros_like(dot), where=sd > 0)
        grad_x = (gh - gh.mean(axis=-1, keepdims=True)) / den - xc * coupling
        return grad_x, grad_gain

    return emit("filter_norm", (x, g), out, vjp, (centered, std, denom, normalized, g.data))


# -----------------------------------------------------------------------------
# Generators
# -----------------------------------------------------------------------------


def _raw_spatial_rows(x: Tensor, params: SpatialGenParams, tape: Tape | None) -> Tensor:
    batch, _, frames, bands = x.shape
    weight, bias = bind(params.weight, tape), bind(params.bias, tape)
    taps = params.kernel_size**2
    half = (params.window - 1) // 2
    if params.axis == "frequency":
        if frames != weight.shape[2]:
            raise DimensionError(
                f"generating conv spans {weight.shape[2]} frames, input has {frames}", axis="time"
            )
        out = conv2d(x, weight, padding=(0, half), bias=bias)
        rows = reshape(out, (batch, taps, bands))
    elif params.axis == "time":
        if bands != weight.shape[3]:
            raise DimensionError(
                f"generating conv spans {weight.shape[3]} bands, input has {bands}",
                axis="frequency",
            )
        out = conv2d(x, weight, padding=(half, 0), bias=bias)
        rows = reshape(out, (batch, taps, frames))
    else:
        out = conv2d(x, weight, bias=bias)
        rows = reshape(out, (batch, taps, frames * bands))
    return transpose(rows, (0, 2, 1))


def gen_spatial_filters(
    x: Tensor | np.ndarray, params: SpatialGenParams, tape: Tape | None = None
) -> SpatialFilterBank:
    """Spatial bank [B, L, K*K]: generating conv, then softmax constraint, then Filter-Norm."""
    x = as_tensor(x)
    rows = _raw_spatial_rows(x, params, tape)
    if params.use_attention:
        rows = attention_constrain(rows, params.temperature)
    rows = filter_norm(rows, bind(params.gain, tape))
    return SpatialFilterBank(params.axis, rows, params.kernel_size)


def gen_channel_filters(
    x: Tensor | np.ndarray, params: ChannelGenParams, tape: Tape | None = None
) -> ChannelFilterBank:
    """Channel bank [B, C, K*K] shared by every location."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != params.channels:
        raise DimensionError(
            f"channel generator expects {params.channels} channels, got shape {x.shape}",
            axis="channel",
        )
    pooled = global_avg_pool(x)
    hidden = relu(linear(pooled, bind(params.fc1_weight, tape), bind(params.fc1_bias, tape)))
    flat = linear(hidden, bind(params.fc2_weight, tape), bind(params.fc2_bias, tape))
    rows = reshape(flat, (x.shape[0], params.channels, params.kernel_size**2))
    rows = filter_norm(rows, bind(params.gain, tape))
    return ChannelFilterBank(rows, params.kernel_size)
