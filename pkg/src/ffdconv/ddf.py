"""Decoupled dynamic filtering.

Each output position (t, f) of channel c is filtered with the K x K kernel
spatial[l(t, f)] * channel[c], where l(t, f) is f for frequency-indexed banks,
t for time-indexed banks and t*F + f for per-pixel banks. The fused path
accumulates one kernel tap at a time and never builds the per-location
combined kernel; `ddf_reference` does build it and then convolves directly,
serving as the oracle.

Zero padding, stride 1, depthwise, no bias.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import FILTER_AXES
from .exceptions import DimensionError
from .parallel import map_slices
from .tensor import Tensor, as_tensor, emit

logger = logging.getLogger(__name__)

# Channels filtered per scratch buffer; bounds fused working memory to
# CHANNEL_BLOCK x T x F regardless of the channel count.
CHANNEL_BLOCK = 8


@dataclass(frozen=True)
class SpatialFilterBank:
    """Per-location K*K filters, values [B, L, K*K]."""

    axis: str
    values: Tensor
    kernel_size: int

    def __post_init__(self) -> None:
        if self.axis not in FILTER_AXES:
            raise DimensionError(f"Unknown filter axis '{self.axis}'", axis="axis")
        if self.kernel_size % 2 == 0:
            raise DimensionError(f"kernel size must be odd, got {self.kernel_size}", axis="kernel")
        object.__setattr__(self, "values", as_tensor(self.values))
        if self.values.ndim != 3 or self.values.shape[2] != self.kernel_size**2:
            raise DimensionError(
                f"spatial bank must be [B, L, {self.kernel_size**2}], got {self.values.shape}",
                axis="kernel",
            )

    def locations(self, frames: int, bands: int) -> int:
        """Number of locations L this bank needs for a frames x bands input."""
        return {"frequency": bands, "time": frames, "pixel": frames * bands}[self.axis]


@dataclass(frozen=True)
class ChannelFilterBank:
    """Per-channel K*K filters shared by all locations, values [B, C, K*K]."""

    values: Tensor
    kernel_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", as_tensor(self.values))
        if self.values.ndim != 3 or self.values.shape[2] != self.kernel_size**2:
            raise DimensionError(
                f"channel bank must be [B, C, {self.kernel_size**2}], got {self.values.shape}",
                axis="kernel",
            )


def _validate(x: Tensor, spatial: SpatialFilterBank, channel: ChannelFilterBank) -> None:
    if x.ndim != 4:
        raise DimensionError(f"input must be [B, C, T, F], got {x.shape}", axis="input")
    batch, channels, frames, bands = x.shape
    if spatial.kernel_size != channel.kernel_size:
        raise DimensionError(
            f"kernel size mismatch: spatial {spatial.kernel_size}, channel {channel.kernel_size}",
            axis="kernel",
        )
    if spatial.values.shape[0] != batch or channel.values.shape[0] != batch:
        raise DimensionError(
            f"filter banks cover {spatial.values.shape[0]}/{channel.values.shape[0]} "
            f"batch items, input has {batch}",
            axis="batch",
        )
    expected = spatial.locations(frames, bands)
    if spatial.values.shape[1] != expected:
        raise DimensionError(
            f"{spatial.axis} bank has {spatial.values.shape[1]} rows, input needs {expected}",
            axis=spatial.axis,
        )
    if channel.values.shape[1] != channels:
        raise DimensionError(
            f"channel bank has {channel.values.shape[1]} rows, input has {channels} channels",
            axis="channel",
        )


def _spatial_map(row: np.ndarray, axis: str, frames: int, bands: int) -> np.ndarray:
    """Broadcastable [T, F] view of one tap of a spatial bank."""
    if axis == "frequency":
        return row[None, :]
    if axis == "time":
        return row[:, None]
    return row.reshape(frames, bands)


def _reduce_to_locations(grid: np.ndarray, axis: str) -> np.ndarray:
    """Sum a [T, F] map onto the L locations of a bank."""
    if axis == "frequency":
        return grid.sum(axis=0)
    if axis == "time":
        return grid.sum(axis=1)
    return grid.reshape(-1)


def _pad(x: np.ndarray, kernel_size: int) -> np.ndarray:
    half = kernel_size // 2
    return np.pad(x, ((0, 0), (0, 0), (half, half), (half, half)))


def _forward_item(
    xp: np.ndarray, spatial: np.ndarray, channel: np.ndarray, axis: str, k: int, out: np.ndarray
) -> None:
    channels, frames, bands = out.shape
    block = min(channels, CHANNEL_BLOCK)
    tap = np.empty((block, frames, bands), dtype=out.dtype)
    for start in range(0, channels, block):
        stop = min(start + block, channels)
        scratch = tap[: stop - start]
        for index in range(k * k):
            i, j = divmod(index, k)
            smap = _spatial_map(spatial[:, index], axis, frames, bands)
            coef = channel[start:stop, index][:, None, None] * smap
            np.multiply(coef, xp[start:stop, i : i + frames, j : j + bands], out=scratch)
            out[start:stop] += scratch


def _backward_item(
    xp: np.ndarray,
    spatial: np.ndarray,
    channel: np.ndarray,
    grad_out: np.ndarray,
    axis: str,
    k: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    channels, frames, bands = grad_out.shape
    grad_xp = np.zeros_like(xp)
    grad_spatial = np.zeros_like(spatial)
    grad_channel = np.zeros_like(channel)
    for index in range(k * k):
        i, j = divmod(index, k)
        smap = _spatial_map(spatial[:, index], axis, frames, bands)
        cvec = channel[:, index][:, None, None]
        grad_xp[:, i : i + frames, j : j + bands] += grad_out * (cvec * smap)
        prod = xp[:, i : i + frames, j : j + bands] * grad_out
        grad_channel[:, index] = (prod * smap).sum(axis=(1, 2))
        grad_spatial[:, index] = _reduce_to_locations((prod * cvec).sum(axis=0), axis)
    half = k // 2
    grad_x = grad_xp[:, half : half + frames, half : half + bands]
    return grad_x, grad_spatial, grad_channel


def ddf_forward(
    input: Tensor | np.ndarray, spatial: SpatialFilterBank, channel: ChannelFilterBank
) -> Tensor:
    """Fused dynamic filtering; records on the tape when any operand is tracked."""
    x = as_tensor(input)
    _validate(x, spatial, channel)
    k = spatial.kernel_size
    xp = _pad(x.data, k)
    s, c = spatial.values.data, channel.values.data
    out = np.zeros(x.shape, dtype=x.dtype)
    map_slices(lambda b: _forward_item(xp[b], s[b], c[b], spatial.axis, k, out[b]), x.shape[0])

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        return _backward_arrays(*saved, g)

    return emit(
        f"ddf_{spatial.axis}",
        (x, spatial.values, channel.values),
        out,
        vjp,
        (xp, s, c, spatial.axis, k),
    )


def _backward_arrays(
    xp: np.ndarray, s: np.ndarray, c: np.ndarray, axis: str, k: int, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    items = map_slices(
        lambda b: _backward_item(xp[b], s[b], c[b], grad_out[b], axis, k), grad_out.shape[0]
    )
    grad_x = np.stack([item[0] for item in items])
    grad_s = np.stack([item[1] for item in items])
    grad_c = np.stack([item[2] for item in items])
    return grad_x, grad_s, grad_c


def ddf_backward(
    input: Tensor | np.ndarray,
    spatial: SpatialFilterBank,
    channel: ChannelFilterBank,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoints of the trilinear form: (grad_input, grad_spatial, grad_channel)."""
    x = as_tensor(input)
    _validate(x, spatial, channel)
    grad_out = np.asarray(grad_out, dtype=x.dtype)
    if grad_out.shape != x.shape:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != input shape {x.shape}", axis="grad_out"
        )
    k = spatial.kernel_size
    return _backward_arrays(
        _pad(x.data, k), spatial.values.data, channel.values.data, spatial.axis, k, grad_out
    )


def ddf_reference(
    input: Tensor | np.ndarray, spatial: SpatialFilterBank, channel: ChannelFilterBank
) -> Tensor:
    """Brute-force oracle: materialize every combined kernel, then convolve directly."""
    x = as_tensor(input)
    _validate(x, spatial, channel)
    batch, channels, frames, bands = x.shape
    k = spatial.kernel_size
    xp = _pad(x.data, k)
    s, c = spatial.values.data, channel.values.data
    locations = s.shape[1]

    combined = np.empty((batch, locations, channels, k, k), dtype=x.dtype)
    for b in range(batch):
        for loc in range(locations):
            for ch in range(channels):
                combined[b, loc, ch] = (s[b, loc] * c[b, ch]).reshape(k, k)

    def location(t: int, f: int) -> int:
        if spatial.axis == "frequency":
            return f
        if spatial.axis == "time":
            return t
        return t * bands + f

    out = np.zeros(x.shape, dtype=x.dtype)
    for b in range(batch):
        for ch in range(channels):
            for t in range(frames):
                for f in range(bands):
                    kernel = combined[b, location(t, f), ch]
                    acc = 0.0
                    for i in range(k):
                        for j in range(k):
                            acc += kernel[i, j] * xp[b, ch, t + i, f + j]
                    out[b, ch, t, f] = acc
    return Tensor(out)


def combined_kernel_bytes(
    input_shape: tuple[int, ...], spatial: SpatialFilterBank
) -> int:
    """Size of the [B, L, C, K*K] buffer the fused path avoids."""
    batch, channels = input_shape[0], input_shape[1]
    return (
        batch * spatial.values.shape[1] * channels * spatial.kernel_size**2
        * spatial.values.dtype.itemsize
    )
