"""Conv blocks: static 3x3 baseline and the dynamic ffd/ftd/ddf kinds.

Dynamic kinds map C_in -> C_out with a 1x1 channel transform, generate
spatial and channel banks from the transformed feature, and filter it with
`ddf_forward`. Every kind ends with optional batch norm and a GLU or ReLU
activation, and preserves (T, F).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import BlockConfig
from .ddf import ddf_forward
from .exceptions import DimensionError
from .filters import ChannelGenParams, SpatialGenParams, gen_channel_filters, gen_spatial_filters
from .ops import batch_norm, conv2d, mul, relu, sigmoid
from .tensor import Parameter, Tape, Tensor, as_tensor, bind

logger = logging.getLogger(__name__)


@dataclass
class BlockState:
    """Parameters and norm statistics of one block."""

    config: BlockConfig
    conv_weight: Parameter
    conv_bias: Parameter
    spatial: SpatialGenParams | None = None
    channel: ChannelGenParams | None = None
    norm_gamma: Parameter | None = None
    norm_beta: Parameter | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    glu_weight: Parameter | None = None
    glu_bias: Parameter | None = None
    prefix: str = field(default="block", repr=False)

    def parameters(self) -> list[Parameter]:
        """All learnable parameters, in a fixed order."""
        params = [self.conv_weight, self.conv_bias]
        if self.spatial is not None:
            params += self.spatial.parameters()
        if self.channel is not None:
            params += self.channel.parameters()
        for extra in (self.norm_gamma, self.norm_beta, self.glu_weight, self.glu_bias):
            if extra is not None:
                params.append(extra)
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-learnable state saved with checkpoints."""
        if self.running_mean is None:
            return {}
        return {
            f"{self.prefix}.norm.running_mean": self.running_mean,
            f"{self.prefix}.norm.running_var": self.running_var,
        }

    def set_temperature(self, temperature: float) -> None:
        if self.spatial is not None:
            self.spatial.temperature = temperature


def init_block(
    config: BlockConfig,
    rng: np.random.Generator,
    prefix: str = "block",
    dtype: str = "float32",
) -> BlockState:
    """Create a block with Kaiming-uniform weights and zero biases."""
    c_in, c_out = config.c_in, config.c_out
    if config.is_dynamic:
        weight_shape = (c_out, c_in, 1, 1)
        fan_in = c_in
    else:
        k = config.kernel_size
        weight_shape = (c_out, c_in, k, k)
        fan_in = c_in * k * k

    name = "transform" if config.is_dynamic else "conv"
    state = BlockState(
        config=config,
        conv_weight=Parameter.kaiming(f"{prefix}.{name}.weight", weight_shape, fan_in, rng, dtype),
        conv_bias=Parameter.zeros(f"{prefix}.{name}.bias", (c_out,), dtype),
        prefix=prefix,
    )
    if config.is_dynamic:
        state.spatial = SpatialGenParams.create(
            f"{prefix}.spatial",
            config.axis,
            c_out,
            config.kernel_size,
            config.window,
            rng,
            frames=config.frames,
            bands=config.bands,
            use_attention=config.use_attention,
            dtype=dtype,
        )
        state.channel = ChannelGenParams.create(
            f"{prefix}.channel",
            c_out,
            config.kernel_size,
            rng,
            reduction=config.reduction,
            dtype=dtype,
        )
    if config.norm == "batch":
        state.norm_gamma = Parameter.full(f"{prefix}.norm.gamma", (c_out,), 1.0, dtype)
        state.norm_beta = Parameter.zeros(f"{prefix}.norm.beta", (c_out,), dtype)
        state.running_mean = np.zeros(c_out, dtype=state.conv_weight.value.dtype)
        state.running_var = np.ones(c_out, dtype=state.conv_weight.value.dtype)
    if config.activation == "glu":
        state.glu_weight = Parameter.kaiming(
            f"{prefix}.glu.weight", (c_out, c_out, 1, 1), c_out, rng, dtype
        )
        state.glu_bias = Parameter.zeros(f"{prefix}.glu.bias", (c_out,), dtype)
    return state


def block_forward(
    x: Tensor | np.ndarray,
    state: BlockState,
    tape: Tape | None = None,
    training: bool = False,
) -> Tensor:
    """[B, C_in, T, F] -> [B, C_out, T, F]."""
    x = as_tensor(x)
    config = state.config
    if x.ndim != 4 or x.shape[1] != config.c_in:
        raise DimensionError(
            f"block expects [B, {config.c_in}, T, F], got {x.shape}", axis="channel"
        )
    weight, bias = bind(state.conv_weight, tape), bind(state.conv_bias, tape)
    if config.is_dynamic:
        h = conv2d(x, weight, bias=bias)
        spatial = gen_spatial_filters(h, state.spatial, tape)
        channel = gen_channel_filters(h, state.channel, tape)
        y = ddf_forward(h, spatial, channel)
    else:
        y = conv2d(x, weight, padding=config.kernel_size // 2, bias=bias)

    if config.norm == "batch":
        y = batch_norm(
            y,
            bind(state.norm_gamma, tape),
            bind(state.norm_beta, tape),
            state.running_mean,
            state.running_var,
            training,
        )
    if config.activation == "glu":
        gate = conv2d(y, bind(state.glu_weight, tape), bias=bind(state.glu_bias, tape))
        return mul(gate, sigmoid(y))
    return relu(y)


def param_count(config: BlockConfig) -> int:
    """Closed-form parameter count of a block.

    static: C_out*C_in*K*K + C_out
    dynamic transform: C_out*C_in + C_out
    ffd generating conv: K*K*C_out*T*W + K*K + 1 (gain)
    ftd generating conv: K*K*C_out*W*F + K*K + 1
    ddf generating conv: K*K*C_out + K*K + 1
    channel branch: h*C_out + h + C_out*K*K*h + C_out*K*K + 1, h = max(1, C_out // r)
    batch norm: 2*C_out; GLU: C_out*C_out + C_out
    """
    c_in, c_out, k = config.c_in, config.c_out, config.kernel_size
    taps = k * k
    if config.kind == "static":
        total = c_out * c_in * taps + c_out
    else:
        total = c_out * c_in + c_out
        if config.kind == "ffd":
            extent = config.frames * config.window
        elif config.kind == "ftd":
            extent = config.window * config.bands
        else:
            extent = 1
        total += taps * c_out * extent + taps + 1
        h = config.hidden
        total += h * c_out + h + c_out * taps * h + c_out * taps + 1
    if config.norm == "batch":
        total += 2 * c_out
    if config.activation == "glu":
        total += c_out * c_out + c_out
    return total
