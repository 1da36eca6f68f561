"""Central finite-difference gradient checks.

An instance is a builder `build(dtype) -> (parameters, forward)` where
`forward(tape)` runs the op under test. The analytic gradient of a random
projection of the output is taken at the requested dtype; the numeric
gradient is always taken on a float64 build of the same instance, so float32
checks measure only the float32 backward error.

Relative error: ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
over the sampled coordinates.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .blocks import block_forward, init_block
from .config import BlockConfig, ModelConfig
from .ddf import ChannelFilterBank, SpatialFilterBank, ddf_forward
from .exceptions import NumericError
from .filters import (
    ChannelGenParams,
    SpatialGenParams,
    filter_norm,
    gen_channel_filters,
    gen_spatial_filters,
)
from .model import GruLayer, GruParams, gru_forward, init_model, model_forward
from .tensor import Parameter, Tape, Tensor, bind, resolve_dtype
from .train import bce_loss

logger = logging.getLogger(__name__)

Forward = Callable[[Tape | None], Tensor]
Builder = Callable[[np.dtype], tuple[list[Parameter], Forward]]

# Central differences are always taken in float64
EPSILON = 1e-5
TOLERANCE = {"float32": 1e-4, "float64": 1e-6}
MAX_COORDS = 6


@dataclass
class GradCheckResult:
    op: str
    dtype: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)


def check_instance(
    build: Builder,
    dtype: str | np.dtype = "float64",
    seed: int = 0,
    eps: float | None = None,
    max_coords: int = MAX_COORDS,
) -> float:
    """Relative error between analytic and central-difference gradients of one instance."""
    dtype = resolve_dtype(dtype)
    eps = EPSILON if eps is None else eps
    rng = np.random.default_rng(seed)

    params, forward = build(dtype)
    tape = Tape()
    out = forward(tape)
    projection = rng.standard_normal(out.shape)
    for p in params:
        p.zero_grad()
    tape.backward(out, projection.astype(out.dtype))

    ref_params, ref_forward = build(np.dtype(np.float64))

    def objective() -> float:
        return float(np.sum(projection * ref_forward(None).numpy().astype(np.float64)))

    analytic, numeric = [], []
    for p, ref in zip(params, ref_params):
        flat = ref.value.reshape(-1)
        count = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for i in coords:
            original = flat[i]
            flat[i] = original + eps
            plus = objective()
            flat[i] = original - eps
            minus = objective()
            flat[i] = original
            numeric.append((plus - minus) / (2 * eps))
            analytic.append(float(p.grad.reshape(-1)[i]))
    return relative_error(np.array(analytic), np.array(numeric))


# -----------------------------------------------------------------------------
# Instance builders
# -----------------------------------------------------------------------------


def _values(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape)


def _params(
    seed: int, dtype: np.dtype, **shapes: tuple[int, ...]
) -> dict[str, Parameter]:
    rng = np.random.default_rng(seed)
    return {
        name: Parameter(name, _values(rng, shape).astype(dtype)) for name, shape in shapes.items()
    }


def _elementwise(op: str) -> Callable[[int], Builder]:
    def make(seed: int) -> Builder:
        shape = tuple(int(n) for n in np.random.default_rng(seed).integers(1, 5, size=3))

        def build(dtype: np.dtype) -> tuple[list[Parameter], Forward]:
            p = _params(seed, dtype, a=shape, b=(1,) + shape[1:])
            if op in ("relu", "sigmoid", "tanh"):
                return [p["a"]], lambda tape: ops.elementwise(op, bind(p["a"], tape))
            if op == "scale":
                return [p["a"]], lambda tape: ops.scale(bind(p["a"], tape), -1.7)
            return list(p.values()), lambda tape: ops.elementwise(
                op, bind(p["a"], tape), bind(p["b"], tape)
            )

        return build

    return make


def _softmax(seed: int) -> Builder:
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in rng.integers(2, 5, size=2))
    axis = int(rng.integers(0, 2))

    def build(dtype):
        p = _params(seed, dtype, x=shape)
        return [p["x"]], lambda tape: ops.softmax(bind(p["x"], tape), axis=axis)

    return build


def _linear(seed: int) -> Builder:
    rng = np.random.default_rng(seed)
    b, n, m = (int(v) for v in rng.integers(1, 5, size=3))

    def build(dtype):
        p = _params(seed, dtype, x=(b, n), w=(m, n), bias=(m,))
        return list(p.values()), lambda tape: ops.linear(
            bind(p["x"], tape), bind(p["w"], tape), bind(p["bias"], tape)
        )

    return build


def _conv2d(seed: int) -> Builder:
    rng = np.random.default_rng(seed)
    c_in, c_out = (int(v) for v in rng.integers(1, 3, size=2))
    k_t, k_f = (int(v) for v in rng.integers(1, 4, size=2))
    stride = tuple(int(v) for v in rng.integers(1, 3, size=2))
    padding = tuple(int(v) for v in rng.integers(0, 2, size=2))
    t, f = k_t + int(rng.integers(0, 4)), k_f + int(rng.integers(0, 4))

    def build(dtype):
        p = _params(seed, dtype, x=(2, c_in, t, f), w=(c_out, c_in, k_t, k_f), bias=(c_out,))
        return list(p.values()), lambda tape: ops.conv2d(
            bind(p["x"], tape), bind(p["w"], tape), stride, padding, bind(p["bias"], tape)
        )

    return build


def _pool(mode: str) -> Callable[[int], Builder]:
    def make(seed: int) -> Builder:
        rng = np.random.default_rng(seed)
        window = tuple(int(v) for v in rng.integers(1, 4, size=2))
        shape = (2, 2, window[0] * 2 + int(rng.integers(0, 2)), window[1] * 2)

        def build(dtype):
            # distinct, well-spaced values keep every window's argmax away from ties
            size = int(np.prod(shape))
            values = np.random.default_rng(seed).permutation(size) * (2.0 / size) - 1.0
            x = Parameter("x", values.reshape(shape).astype(dtype))
            return [x], lambda tape: ops.pool2d(bind(x, tape), mode, window)

        return build

    return make


def _batch_norm(seed: int) -> Builder:
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(2, 4)), int(rng.integers(1, 4)), 3, int(rng.integers(2, 5)))
    training = bool(seed % 2 == 0)

    def build(dtype):
        c = shape[1]
        p = _params(seed, dtype, x=shape, gamma=(c,), beta=(c,))

        def forward(tape):
            return ops.batch_norm(
                bind(p["x"], tape),
                bind(p["gamma"], tape),
                bind(p["beta"], tape),
                np.zeros(c, dtype=dtype),
                np.full(c, 0.5, dtype=dtype),
                training,
            )

        return list(p.values()), forward

    return build


def _filter_norm(seed: int) -> Builder:
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 6)), 9)

    def build(dtype):
        p = _params(seed, dtype, rows=shape, gain=(1,))
        return list(p.values()), lambda tape: filter_norm(
            bind(p["rows"], tape), bind(p["gain"], tape)
        )

    return build


def _ddf(axis: str) -> Callable[[int], Builder]:
    def make(seed: int) -> Builder:
        rng = np.random.default_rng(seed)
        k = int(rng.choice([1, 3, 5]))
        b, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        t, f = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        rows = {"frequency": f, "time": t, "pixel": t * f}[axis]

        def build(dtype):
            p = _params(
                seed, dtype, x=(b, c, t, f), spatial=(b, rows, k * k), channel=(b, c, k * k)
            )

            def forward(tape):
                spatial = SpatialFilterBank(axis, bind(p["spatial"], tape), k)
                channel = ChannelFilterBank(bind(p["channel"], tape), k)
                return ddf_forward(bind(p["x"], tape), spatial, channel)

            return list(p.values()), forward

        return build

    return make


def _generated_ddf(axis: str) -> Callable[[int], Builder]:
    """gen_spatial + gen_channel -> ddf -> sum, gradients to input and generator weights."""

    def make(seed: int) -> Builder:
        rng = np.random.default_rng(seed)
        c, t, f = int(rng.integers(1, 3)), int(rng.integers(3, 6)), int(rng.integers(3, 6))
        window = 3
        use_attention = bool(seed % 2 == 0)

        def build(dtype):
            prng = np.random.default_rng(seed)
            spatial = SpatialGenParams.create(
                "spatial", axis, c, 3, window, prng, frames=t, bands=f,
                use_attention=use_attention, dtype=dtype.name,
            )
            spatial.temperature = 2.0
            channel = ChannelGenParams.create("channel", c, 3, prng, reduction=1, dtype=dtype.name)
            for p in spatial.parameters() + channel.parameters():
                p.value[...] = prng.uniform(-1.0, 1.0, size=p.shape)
            x = Parameter("x", prng.uniform(-1.0, 1.0, size=(2, c, t, f)).astype(dtype))
            params = [x] + spatial.parameters() + channel.parameters()

            def forward(tape):
                xt = bind(x, tape)
                spatial_bank = gen_spatial_filters(xt, spatial, tape)
                channel_bank = gen_channel_filters(xt, channel, tape)
                out = ddf_forward(xt, spatial_bank, channel_bank)
                return ops.sum(out)

            return params, forward

        return build

    return make


def _gru(seed: int) -> Builder:
    rng = np.random.default_rng(seed)
    b, t, d, h = (int(v) for v in rng.integers(1, 4, size=4))

    def build(dtype):
        prng = np.random.default_rng(seed)
        layer = GruLayer(
            forward=GruParams.create("fwd", d, h, prng, dtype.name),
            backward=GruParams.create("bwd", d, h, prng, dtype.name),
        )
        for p in layer.parameters():
            p.value[...] = prng.uniform(-1.0, 1.0, size=p.shape)
        x = Parameter("x", prng.uniform(-1.0, 1.0, size=(b, t, d)).astype(dtype))
        return [x] + layer.parameters(), lambda tape: gru_forward(bind(x, tape), layer, tape=tape)

    return build


def _bce(seed: int) -> Builder:
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 5)))
    target = rng.integers(0, 2, size=shape).astype(np.float64)

    def build(dtype):
        p = _params(seed, dtype, logits=shape)
        return [p["logits"]], lambda tape: bce_loss(
            ops.sigmoid(bind(p["logits"], tape)), target.astype(dtype)
        )

    return build


def _block(kind: str) -> Callable[[int], Builder]:
    def make(seed: int) -> Builder:
        def build(dtype):
            config = BlockConfig(
                kind=kind, c_in=1, c_out=2, window=3, frames=6, bands=6,
                norm="batch" if seed % 2 == 0 else "none",
                reduction=1,
            )
            prng = np.random.default_rng(seed)
            state = init_block(config, prng, prefix="block", dtype=dtype.name)
            if state.spatial is not None:
                state.spatial.temperature = 2.0
            x = Parameter("x", prng.uniform(-1.0, 1.0, size=(2, 1, 6, 6)).astype(dtype))

            def forward(tape):
                return block_forward(bind(x, tape), state, tape, training=True)

            return [x] + state.parameters(), forward

        return build

    return make


TINY_MODEL = ModelConfig(
    n_classes=2,
    frames=32,
    bands=16,
    channels=(2, 2),
    kinds=("static", "ffd"),
    time_pool=(2, 2),
    freq_pool=(2, 2),
    gru_hidden=3,
    gru_layers=2,
)


def _model(seed: int) -> Builder:
    def build(dtype):
        state = init_model(replace(TINY_MODEL, dtype=dtype.name), seed)
        state.set_temperature(2.0)
        features = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(2, 1, 32, 16))

        def forward(tape):
            out = model_forward(features.astype(dtype), state, tape, training=True)
            strong = ops.reshape(out.strong, (-1,))
            weak = ops.reshape(out.weak, (-1,))
            return ops.concat([strong, weak], axis=0)

        return state.parameters(), forward

    return build


SUITE: dict[str, Callable[[int], Builder]] = {
    "add": _elementwise("add"),
    "sub": _elementwise("sub"),
    "mul": _elementwise("mul"),
    "scale": _elementwise("scale"),
    "relu": _elementwise("relu"),
    "sigmoid": _elementwise("sigmoid"),
    "tanh": _elementwise("tanh"),
    "softmax": _softmax,
    "linear": _linear,
    "conv2d": _conv2d,
    "avg_pool2d": _pool("avg"),
    "max_pool2d": _pool("max"),
    "batch_norm": _batch_norm,
    "filter_norm": _filter_norm,
    "bce": _bce,
    "ddf_frequency": _ddf("frequency"),
    "ddf_time": _ddf("time"),
    "ddf_pixel": _ddf("pixel"),
    "gen_ffd": _generated_ddf("frequency"),
    "gen_ftd": _generated_ddf("time"),
    "gen_ddf": _generated_ddf("pixel"),
    "gru": _gru,
    "block_static": _block("static"),
    "block_ffd": _block("ffd"),
    "block_ftd": _block("ftd"),
    "block_ddf": _block("ddf"),
    "model": _model,
}


def run_check(
    op: str,
    dtype: str = "float64",
    instances: int = 20,
    seed: int = 0,
) -> GradCheckResult:
    """Check `instances` random instances of one suite entry."""
    if op not in SUITE:
        raise KeyError(f"Unknown gradient check '{op}' (expected one of {list(SUITE)})")
    dtype = resolve_dtype(dtype)
    worst = 0.0
    for i in range(instances):
        instance_seed = seed * 1000 + i
        try:
            error = check_instance(SUITE[op](instance_seed), dtype, seed=instance_seed)
        except NumericError as e:
            logger.warning("%s instance %d produced non-finite values: %s", op, i, e)
            error = float("inf")
        worst = max(worst, error)
    logger.debug("gradcheck %s [%s]: max rel err %.3e", op, dtype.name, worst)
    return GradCheckResult(op, dtype.name, instances, worst, TOLERANCE[dtype.name])


def run_suite(
    dtype: str = "float64",
    instances: int = 20,
    seed: int = 0,
    only: list[str] | None = None,
    on_result: Callable[[GradCheckResult], None] | None = None,
) -> list[GradCheckResult]:
    """Run every (or the selected) gradient check."""
    results = []
    for op in only or list(SUITE):
        result = run_check(op, dtype, instances, seed)
        results.append(result)
        if on_result is not None:
            on_result(result)
    return results
