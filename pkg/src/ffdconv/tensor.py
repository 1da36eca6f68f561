"""Dense tensors, parameters and the reverse-mode tape.

Tensors are immutable numpy-backed arrays in row-major layout. An op whose
inputs live on a `Tape` records a `TapeNode` (op name, input node ids, saved
activations, output shape, adjoint); `Tape.backward` walks those nodes once in
reverse recording order and accumulates gradients into every reachable
`Parameter`. Ops whose inputs carry no tape just compute.

Feature tensors use the layout [batch, channel, time, frequency].
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .exceptions import DimensionError, NumericError

logger = logging.getLogger(__name__)

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Adjoint signature: (output gradient, saved activations) -> one gradient per input
Vjp = Callable[[np.ndarray, tuple], Sequence[np.ndarray | None]]

_finite_checks = True


@contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    """Temporarily enable or disable the NaN/Inf check on op outputs."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = enabled
    try:
        yield
    finally:
        _finite_checks = previous


def resolve_dtype(dtype: str | np.dtype | type | None) -> np.dtype:
    """Map 'f32'/'f64'/'float32'/'float64' (or numpy dtypes) to a float dtype."""
    if dtype is None:
        return np.dtype(np.float64)
    aliases = {"f32": np.float32, "f64": np.float64}
    resolved = np.dtype(aliases.get(dtype, dtype)) if isinstance(dtype, str) else np.dtype(dtype)
    if resolved not in FLOAT_DTYPES:
        raise DimensionError(f"Unsupported dtype {resolved} (expected float32 or float64)")
    return resolved


class Tensor:
    """Immutable dense array, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "index")

    def __init__(
        self,
        data: Any,
        dtype: str | np.dtype | None = None,
        *,
        tape: Tape | None = None,
        index: int | None = None,
    ):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(resolve_dtype(dtype), copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        view = np.ascontiguousarray(arr).view()
        view.flags.writeable = False
        self.data = view
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        """Read-only view of the values."""
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = f", node={self.index}" if self.tracked else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: Any) -> Tensor:
        from .ops import add

        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        from .ops import add

        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        from .ops import sub

        return sub(self, other)

    def __mul__(self, other: Any) -> Tensor:
        from .ops import mul

        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        from .ops import mul

        return mul(other, self)

    def __neg__(self) -> Tensor:
        from .ops import scale

        return scale(self, -1.0)


def as_tensor(value: Any, dtype: str | np.dtype | None = None) -> Tensor:
    """Wrap arrays and scalars; pass tensors through unchanged."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype)


@dataclass(eq=False)
class Parameter:
    """Learnable array with its accumulated gradient."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        value = np.asarray(self.value)
        if value.dtype not in FLOAT_DTYPES:
            value = value.astype(np.float64)
        self.value = np.ascontiguousarray(value).copy()
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(
                f"gradient shape {self.grad.shape} != value shape {self.value.shape} "
                f"for parameter '{self.name}'"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    @classmethod
    def zeros(cls, name: str, shape: tuple[int, ...], dtype: str = "float32") -> Parameter:
        return cls(name, np.zeros(shape, dtype=resolve_dtype(dtype)))

    @classmethod
    def full(
        cls, name: str, shape: tuple[int, ...], fill: float, dtype: str = "float32"
    ) -> Parameter:
        return cls(name, np.full(shape, fill, dtype=resolve_dtype(dtype)))

    @classmethod
    def kaiming(
        cls,
        name: str,
        shape: tuple[int, ...],
        fan_in: int,
        rng: np.random.Generator,
        dtype: str = "float32",
    ) -> Parameter:
        """Kaiming-uniform (fan-in, ReLU gain) initialisation."""
        return cls.uniform(name, shape, float(np.sqrt(6.0 / max(fan_in, 1))), rng, dtype)

    @classmethod
    def uniform(
        cls,
        name: str,
        shape: tuple[int, ...],
        bound: float,
        rng: np.random.Generator,
        dtype: str = "float32",
    ) -> Parameter:
        values = rng.uniform(-bound, bound, size=shape)
        return cls(name, values.astype(resolve_dtype(dtype)))


@dataclass
class TapeNode:
    """One recorded op."""

    op: str
    inputs: tuple[int | None, ...]
    shape: tuple[int, ...]
    vjp: Vjp | None = None
    saved: tuple = ()
    parameter: Parameter | None = None


class Tape:
    """Single-writer record of ops in topological (recording) order."""

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self._leaves: dict[int, Tensor] = {}
        self._grads: list[np.ndarray | None] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def param(self, parameter: Parameter) -> Tensor:
        """Leaf tensor bound to a parameter's current value."""
        cached = self._leaves.get(id(parameter))
        if cached is not None:
            return cached
        index = len(self.nodes)
        self.nodes.append(
            TapeNode("parameter", (), parameter.shape, parameter=parameter)
        )
        leaf = Tensor(parameter.value, tape=self, index=index)
        self._leaves[id(parameter)] = leaf
        return leaf

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        out: np.ndarray,
        vjp: Vjp | None,
        saved: tuple = (),
    ) -> Tensor:
        index = len(self.nodes)
        input_ids = tuple(t.index if t.tape is self else None for t in inputs)
        self.nodes.append(TapeNode(op, input_ids, tuple(out.shape), vjp, saved))
        return Tensor(out, tape=self, index=index)

    def backward(
        self, output: Tensor, seed: np.ndarray | None = None
    ) -> dict[str, np.ndarray]:
        """Propagate `seed` from `output` back to every reachable parameter.

        Gradients are accumulated into `Parameter.grad`; the returned map holds
        the contribution of this call per parameter name.
        """
        if not self.nodes:
            raise DimensionError("cannot run backward on an empty tape")
        if output.tape is not self or output.index is None:
            raise DimensionError("output tensor was not recorded on this tape")
        if seed is None:
            seed = np.ones(output.shape, dtype=output.dtype)
        seed = np.asarray(seed, dtype=output.dtype)
        if seed.shape != output.shape:
            raise DimensionError(
                f"seed gradient shape {seed.shape} does not match output shape {output.shape}",
                axis="seed",
            )

        grads: list[np.ndarray | None] = [None] * (output.index + 1)
        grads[output.index] = seed
        collected: dict[str, np.ndarray] = {}

        for index in range(output.index, -1, -1):
            grad = grads[index]
            if grad is None:
                continue
            node = self.nodes[index]
            if node.parameter is not None:
                parameter = node.parameter
                parameter.grad = parameter.grad + grad.astype(parameter.grad.dtype, copy=False)
                previous = collected.get(parameter.name)
                collected[parameter.name] = grad if previous is None else previous + grad
                continue
            if node.vjp is None:
                continue
            input_grads = node.vjp(grad, node.saved)
            for input_id, input_grad in zip(node.inputs, input_grads):
                if input_id is None or input_grad is None:
                    continue
                current = grads[input_id]
                grads[input_id] = input_grad if current is None else current + input_grad

        self._grads = grads
        logger.debug("backward over %d nodes, %d parameters", output.index + 1, len(collected))
        return collected

    def gradient(self, tensor: Tensor) -> np.ndarray | None:
        """Gradient reaching `tensor` during the last backward pass."""
        if tensor.tape is not self or tensor.index is None or tensor.index >= len(self._grads):
            return None
        return self._grads[tensor.index]


def backward(
    tape: Tape, seed_gradient: np.ndarray | None = None, output: Tensor | None = None
) -> dict[str, np.ndarray]:
    """Run reverse-mode differentiation from `output` (default: last recorded node)."""
    if not tape.nodes:
        raise DimensionError("cannot run backward on an empty tape")
    if output is None:
        last = len(tape.nodes) - 1
        output = Tensor(np.zeros(tape.nodes[last].shape), tape=tape, index=last)
    return tape.backward(output, seed_gradient)


def bind(parameter: Parameter, tape: Tape | None = None) -> Tensor:
    """Parameter as an operand: a tape leaf when recording, a plain tensor otherwise."""
    if tape is not None:
        return tape.param(parameter)
    return Tensor(parameter.value)


def tape_of(*tensors: Tensor) -> Tape | None:
    """The tape shared by the tracked inputs, if any."""
    tape = None
    for tensor in tensors:
        if tensor.tape is None:
            continue
        if tape is None:
            tape = tensor.tape
        elif tensor.tape is not tape:
            raise DimensionError("inputs are recorded on different tapes")
    return tape


def emit(
    op: str,
    inputs: Sequence[Tensor],
    out: np.ndarray,
    vjp: Vjp | None = None,
    saved: tuple = (),
) -> Tensor:
    """Wrap an op result, checking finiteness and recording it when tracked."""
    if _finite_checks and not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced non-finite values", details={"op": op})
    tape = tape_of(*inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(op, inputs, out, vjp, saved)
