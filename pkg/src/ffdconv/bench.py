"""Fused vs reference timings for the dynamic filtering op."""

from __future__ import annotations

import logging
import time
import tracemalloc
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np

from .config import FILTER_AXES
from .ddf import (
    ChannelFilterBank,
    SpatialFilterBank,
    combined_kernel_bytes,
    ddf_forward,
    ddf_reference,
)
from .tensor import finite_checks

logger = logging.getLogger(__name__)

BENCH_SHAPE = (4, 64, 156, 16)
BENCH_KERNEL = 3


@dataclass
class BenchResult:
    axis: str
    shape: tuple[int, int, int, int]
    kernel_size: int
    fused_seconds: float
    reference_seconds: float
    fused_working_bytes: int
    combined_bytes: int
    max_abs_diff: float

    @property
    def elements(self) -> int:
        return int(np.prod(self.shape))

    @property
    def fused_ns_per_element(self) -> float:
        return self.fused_seconds * 1e9 / self.elements

    @property
    def reference_ns_per_element(self) -> float:
        return self.reference_seconds * 1e9 / self.elements

    @property
    def speedup(self) -> float:
        return self.reference_seconds / self.fused_seconds if self.fused_seconds > 0 else np.inf

    @property
    def allocates_combined(self) -> bool:
        return self.fused_working_bytes >= self.combined_bytes


def random_problem(
    axis: str,
    shape: tuple[int, int, int, int],
    kernel_size: int,
    seed: int = 0,
    dtype: str = "float64",
) -> tuple[np.ndarray, SpatialFilterBank, ChannelFilterBank]:
    """Random input and filter banks for one axis variant."""
    rng = np.random.default_rng(seed)
    batch, channels, frames, bands = shape
    taps = kernel_size * kernel_size
    rows = {"frequency": bands, "time": frames, "pixel": frames * bands}[axis]
    x = rng.standard_normal(shape).astype(dtype)
    spatial = SpatialFilterBank(
        axis, rng.standard_normal((batch, rows, taps)).astype(dtype), kernel_size
    )
    channel = ChannelFilterBank(
        rng.standard_normal((batch, channels, taps)).astype(dtype), kernel_size
    )
    return x, spatial, channel


def _best_time(func: Callable[[], Any], repeats: int) -> tuple[float, Any]:
    best, result = np.inf, None
    for _ in range(max(repeats, 1)):
        start = time.perf_counter()
        result = func()
        best = min(best, time.perf_counter() - start)
    return float(best), result


def padded_bytes(x: np.ndarray, kernel_size: int) -> int:
    """Size of the zero-padded input copy the fused path works from."""
    batch, channels, frames, bands = x.shape
    half = kernel_size // 2
    return batch * channels * (frames + 2 * half) * (bands + 2 * half) * x.dtype.itemsize


def fused_working_bytes(
    x: np.ndarray, spatial: SpatialFilterBank, channel: ChannelFilterBank
) -> int:
    """Peak traced memory of one fused forward call beyond its padded input and output."""
    with finite_checks(False):
        tracemalloc.start()
        try:
            tracemalloc.reset_peak()
            out = ddf_forward(x, spatial, channel)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
    return max(peak - out.data.nbytes - padded_bytes(x, spatial.kernel_size), 0)


def bench_axis(
    axis: str = "frequency",
    shape: tuple[int, int, int, int] = BENCH_SHAPE,
    kernel_size: int = BENCH_KERNEL,
    repeats: int = 3,
    reference_repeats: int = 1,
    seed: int = 0,
) -> BenchResult:
    """Time both paths on the same random problem (best of `repeats`)."""
    if axis not in FILTER_AXES:
        raise ValueError(f"Unknown filter axis '{axis}' (expected one of {FILTER_AXES})")
    x, spatial, channel = random_problem(axis, shape, kernel_size, seed)
    fused_seconds, fused = _best_time(lambda: ddf_forward(x, spatial, channel), repeats)
    reference_seconds, reference = _best_time(
        lambda: ddf_reference(x, spatial, channel), reference_repeats
    )
    result = BenchResult(
        axis=axis,
        shape=tuple(shape),
        kernel_size=kernel_size,
        fused_seconds=fused_seconds,
        reference_seconds=reference_seconds,
        fused_working_bytes=fused_working_bytes(x, spatial, channel),
        combined_bytes=combined_kernel_bytes(x.shape, spatial),
        max_abs_diff=float(np.max(np.abs(fused.numpy() - reference.numpy()))),
    )
    logger.debug(
        "bench %s %s K=%d: fused %.4fs, reference %.4fs (x%.1f)",
        axis, shape, kernel_size, result.fused_seconds, result.reference_seconds, result.speedup,
    )
    return result
