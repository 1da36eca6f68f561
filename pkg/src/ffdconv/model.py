"""CRNN sound event detector with pluggable conv-block kinds.

conv blocks (+ average pooling) -> mean over frequency -> stacked Bi-GRU ->
frame-wise sigmoid classifier (strong) -> attention pooling over time (weak).
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .blocks import BlockState, block_forward, init_block, param_count
from .config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, ModelConfig
from .configfile import dump_record, parse_record
from .exceptions import CheckpointError, ConfigError, DataError, DimensionError
from .ops import concat, linear, mean, mul, pool2d, reshape, sigmoid, softmax, sum, transpose
from .tensor import Parameter, Tape, Tensor, as_tensor, bind, emit, resolve_dtype
from .tensorio import read_named_tensors, write_named_tensors

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# GRU
# -----------------------------------------------------------------------------


@dataclass
class GruParams:
    """One direction of one GRU layer; gate blocks ordered (reset, update, candidate)."""

    w_ih: Parameter
    w_hh: Parameter
    b_ih: Parameter
    b_hh: Parameter

    @classmethod
    def create(
        cls, prefix: str, input_size: int, hidden: int, rng: np.random.Generator, dtype: str
    ) -> GruParams:
        bound = 1.0 / np.sqrt(hidden)
        return cls(
            w_ih=Parameter.uniform(f"{prefix}.w_ih", (3 * hidden, input_size), bound, rng, dtype),
            w_hh=Parameter.uniform(f"{prefix}.w_hh", (3 * hidden, hidden), bound, rng, dtype),
            b_ih=Parameter.zeros(f"{prefix}.b_ih", (3 * hidden,), dtype),
            b_hh=Parameter.zeros(f"{prefix}.b_hh", (3 * hidden,), dtype),
        )

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]


@dataclass
class GruLayer:
    forward: GruParams
    backward: GruParams | None = None

    def parameters(self) -> list[Parameter]:
        params = self.forward.parameters()
        if self.backward is not None:
            params += self.backward.parameters()
        return params


def gru_direction(
    x: Tensor | np.ndarray, params: GruParams, tape: Tape | None = None, reverse: bool = False
) -> Tensor:
    """Run one GRU direction over [B, T, D] from a zero state; returns [B, T, H].

    r = sigmoid(Wir x + bir + Whr h + bhr)
    z = sigmoid(Wiz x + biz + Whz h + bhz)
    n = tanh(Win x + bin + r * (Whn h + bhn))
    h = (1 - z) * h + z * n
    """
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[2] != params.input_size:
        raise DimensionError(
            f"GRU expects [B, T, {params.input_size}], got {x.shape}", axis="feature"
        )
    w_ih, w_hh = bind(params.w_ih, tape), bind(params.w_hh, tape)
    b_ih, b_hh = bind(params.b_ih, tape), bind(params.b_hh, tape)
    batch, frames, _ = x.shape
    hidden = params.hidden
    dtype = x.dtype

    gi = x.data @ w_ih.data.T + b_ih.data
    steps = range(frames - 1, -1, -1) if reverse else range(frames)
    h = np.zeros((batch, hidden), dtype=dtype)
    out = np.empty((batch, frames, hidden), dtype=dtype)
    h_prev = np.empty_like(out)
    reset = np.empty_like(out)
    update = np.empty_like(out)
    cand = np.empty_like(out)
    gh_n = np.empty_like(out)
    for t in steps:
        gh = h @ w_hh.data.T + b_hh.data
        r = expit(gi[:, t, :hidden] + gh[:, :hidden])
        z = expit(gi[:, t, hidden : 2 * hidden] + gh[:, hidden : 2 * hidden])
        n = np.tanh(gi[:, t, 2 * hidden :] + r * gh[:, 2 * hidden :])
        h_prev[:, t], reset[:, t], update[:, t], cand[:, t] = h, r, z, n
        gh_n[:, t] = gh[:, 2 * hidden :]
        h = (1 - z) * h + z * n
        out[:, t] = h

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        xd, wi, wh, hp, rs, up, cn, ghn, order = saved
        grad_gi = np.zeros(xd.shape[:2] + (3 * hidden,), dtype=g.dtype)
        grad_w_hh = np.zeros_like(wh)
        grad_b_hh = np.zeros(3 * hidden, dtype=g.dtype)
        carry = np.zeros((xd.shape[0], hidden), dtype=g.dtype)
        for t in reversed(order):
            dh = g[:, t] + carry
            r, z, n = rs[:, t], up[:, t], cn[:, t]
            dn = dh * z * (1 - n * n)
            dz = dh * (n - hp[:, t]) * z * (1 - z)
            dr = dn * ghn[:, t] * r * (1 - r)
            grad_gh = np.concatenate([dr, dz, dn * r], axis=1)
            grad_gi[:, t] = np.concatenate([dr, dz, dn], axis=1)
            grad_w_hh += grad_gh.T @ hp[:, t]
            grad_b_hh += grad_gh.sum(axis=0)
            carry = dh * (1 - z) + grad_gh @ wh
        grad_x = grad_gi @ wi
        grad_w_ih = np.einsum("btg,btd->gd", grad_gi, xd)
        grad_b_ih = grad_gi.sum(axis=(0, 1))
        return grad_x, grad_w_ih, grad_w_hh, grad_b_ih, grad_b_hh

    saved = (x.data, w_ih.data, w_hh.data, h_prev, reset, update, cand, gh_n, list(steps))
    op = "gru_reverse" if reverse else "gru"
    return emit(op, (x, w_ih, w_hh, b_ih, b_hh), out, vjp, saved)


def gru_forward(
    x: Tensor | np.ndarray,
    params: GruLayer,
    bidirectional: bool = True,
    tape: Tape | None = None,
) -> Tensor:
    """One GRU layer; bidirectional output is [forward | backward] along the last axis."""
    forward = gru_direction(x, params.forward, tape)
    if not bidirectional:
        return forward
    if params.backward is None:
        raise DimensionError("bidirectional GRU needs backward-direction parameters")
    backward = gru_direction(x, params.backward, tape, reverse=True)
    return concat([forward, backward], axis=2)


# -----------------------------------------------------------------------------
# Model
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SedOutput:
    """strong [B, T_out, n_classes] and weak [B, n_classes] posteriors."""

    strong: Tensor
    weak: Tensor


@dataclass
class ModelState:
    config: ModelConfig
    blocks: list[BlockState]
    gru: list[GruLayer]
    strong_weight: Parameter
    strong_bias: Parameter
    attention_weight: Parameter
    attention_bias: Parameter
    temperature: float = field(default=1.0)

    def parameters(self) -> list[Parameter]:
        """All learnable parameters in a fixed order."""
        params: list[Parameter] = []
        for block in self.blocks:
            params += block.parameters()
        for layer in self.gru:
            params += layer.parameters()
        params += [self.strong_weight, self.strong_bias, self.attention_weight, self.attention_bias]
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def buffers(self) -> dict[str, np.ndarray]:
        buffers: dict[str, np.ndarray] = {}
        for block in self.blocks:
            buffers.update(block.buffers())
        buffers["temperature"] = np.array([self.temperature], dtype=np.float64)
        return buffers

    def set_temperature(self, temperature: float) -> None:
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.temperature = float(temperature)
        for block in self.blocks:
            block.set_temperature(self.temperature)

    def zero_grad(self) -> None:
        for parameter in self.parameters():
            parameter.zero_grad()

    def param_count(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))


def init_model(config: ModelConfig, seed: int = 0) -> ModelState:
    """Build a model with deterministic initialisation from `seed`."""
    rng = np.random.default_rng(seed)
    dtype = config.dtype
    blocks = [
        init_block(block_config, rng, prefix=f"blocks.{i}", dtype=dtype)
        for i, block_config in enumerate(config.block_configs())
    ]
    gru = []
    input_size = config.channels[-1]
    for layer in range(config.gru_layers):
        gru.append(
            GruLayer(
                forward=GruParams.create(
                    f"gru.{layer}.forward", input_size, config.gru_hidden, rng, dtype
                ),
                backward=GruParams.create(
                    f"gru.{layer}.backward", input_size, config.gru_hidden, rng, dtype
                ),
            )
        )
        input_size = 2 * config.gru_hidden
    bound = 1.0 / np.sqrt(input_size)
    shape = (config.n_classes, input_size)
    state = ModelState(
        config=config,
        blocks=blocks,
        gru=gru,
        strong_weight=Parameter.uniform("head.strong.weight", shape, bound, rng, dtype),
        strong_bias=Parameter.zeros("head.strong.bias", (config.n_classes,), dtype),
        attention_weight=Parameter.uniform("head.attention.weight", shape, bound, rng, dtype),
        attention_bias=Parameter.zeros("head.attention.bias", (config.n_classes,), dtype),
    )
    state.set_temperature(1.0)
    logger.debug("initialised model: %d parameters, seed %d", state.param_count(), seed)
    return state


def model_param_count(config: ModelConfig) -> int:
    """Closed-form parameter count: blocks + Bi-GRU + both heads."""
    total = np.sum([param_count(block) for block in config.block_configs()])
    h = config.gru_hidden
    input_size = config.channels[-1]
    for _ in range(config.gru_layers):
        total += 2 * (3 * h * input_size + 3 * h * h + 6 * h)
        input_size = 2 * h
    total += 2 * (config.n_classes * input_size + config.n_classes)
    return int(total)


def model_forward(
    features: Tensor | np.ndarray,
    state: ModelState,
    tape: Tape | None = None,
    training: bool = False,
    activations: list[Tensor] | None = None,
) -> SedOutput:
    """Posteriors for features [B, 1, T, F].

    When `activations` is given, each block's pooled output is appended to it.
    """
    config = state.config
    x = as_tensor(features)
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionError(f"features must be [B, 1, T, F], got {x.shape}", axis="input")
    if x.shape[2] != config.frames:
        raise DimensionError(
            f"model built for {config.frames} frames, features have {x.shape[2]}", axis="time"
        )
    if x.shape[3] != config.bands:
        raise DimensionError(
            f"model built for {config.bands} bands, features have {x.shape[3]}", axis="frequency"
        )
    dtype = resolve_dtype(config.dtype)
    if x.dtype != dtype:
        x = Tensor(x.data, dtype)

    for i, block in enumerate(state.blocks):
        x = block_forward(x, block, tape, training)
        window = (config.time_pool[i], config.freq_pool[i])
        if window != (1, 1):
            x = pool2d(x, "avg", window)
        if activations is not None:
            activations.append(x)

    batch, _, frames, _ = x.shape
    seq = transpose(mean(x, axis=3), (0, 2, 1))
    for layer in state.gru:
        seq = gru_forward(seq, layer, bidirectional=True, tape=tape)

    flat = reshape(seq, (batch * frames, seq.shape[2]))
    strong_logits = linear(flat, bind(state.strong_weight, tape), bind(state.strong_bias, tape))
    strong = reshape(sigmoid(strong_logits), (batch, frames, config.n_classes))
    att_logits = linear(
        flat, bind(state.attention_weight, tape), bind(state.attention_bias, tape)
    )
    attention = softmax(reshape(att_logits, (batch, frames, config.n_classes)), axis=1)
    weak = sum(mul(attention, strong), axis=1)
    return SedOutput(strong=strong, weak=weak)


def predict(
    state: ModelState, features: np.ndarray, batch_size: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode posteriors for a stack of clips [N, 1, T, F]."""
    strong, weak = [], []
    for start in range(0, len(features), batch_size):
        out = model_forward(features[start : start + batch_size], state)
        strong.append(out.strong.numpy())
        weak.append(out.weak.numpy())
    if not strong:
        return (
            np.zeros((0, state.config.output_frames, state.config.n_classes)),
            np.zeros((0, state.config.n_classes)),
        )
    return np.concatenate(strong), np.concatenate(weak)


# -----------------------------------------------------------------------------
# Checkpoints
# -----------------------------------------------------------------------------


def _checkpoint_bytes(state: ModelState) -> bytes:
    stream = io.BytesIO()
    header = dump_record(state.config).encode("utf-8")
    stream.write(CHECKPOINT_MAGIC)
    stream.write(struct.pack("<H", CHECKPOINT_VERSION))
    stream.write(struct.pack("<I", len(header)))
    stream.write(header)
    tensors = {name: p.value for name, p in state.named_parameters().items()}
    tensors.update(state.buffers())
    write_named_tensors(stream, tensors)
    return stream.getvalue()


def save_checkpoint(state: ModelState, path: Path | str) -> None:
    """Write magic, version, config block and every named parameter and buffer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_checkpoint_bytes(state))
    logger.debug("saved checkpoint %s", path)


def load_checkpoint(path: Path | str, expected: ModelConfig | None = None) -> ModelState:
    """Rebuild a model from a checkpoint.

    Raises CheckpointError on bad magic or version, on a config that differs
    from `expected`, and on missing or mis-shaped tensors.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 10:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    (length,) = struct.unpack_from("<I", data, 6)
    offset = 10 + length
    try:
        config = parse_record(data[10:offset].decode("utf-8"), ModelConfig, str(path))
    except (ConfigError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable config block: {e}")
    if expected is not None and config != expected:
        differing = [
            name for name in ModelConfig.__dataclass_fields__
            if getattr(config, name) != getattr(expected, name)
        ]
        raise CheckpointError(
            f"{path}: checkpoint config differs in {', '.join(differing)}",
            details={"fields": differing},
        )
    tensors, end = read_named_tensors(data, offset)
    if end != len(data):
        raise CheckpointError(f"{path}: {len(data) - end} trailing bytes")

    state = init_model(config)
    for name, parameter in state.named_parameters().items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter '{name}'")
        value = tensors.pop(name)
        if value.shape != parameter.shape or value.dtype != parameter.value.dtype:
            raise CheckpointError(
                f"{path}: parameter '{name}' is {value.dtype}{value.shape}, "
                f"expected {parameter.value.dtype}{parameter.shape}"
            )
        parameter.value = value
        parameter.zero_grad()
    for name, buffer in state.buffers().items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing buffer '{name}'")
        if name != "temperature":
            buffer[...] = tensors.pop(name)
    state.set_temperature(float(tensors.pop("temperature")[0]))
    if tensors:
        raise CheckpointError(f"{path}: unexpected tensors {sorted(tensors)}")
    return state
