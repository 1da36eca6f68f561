"""Data-driven configuration for ffdconv.

All configuration records and defaults are centralized here - no hardcoded
settings elsewhere.
"""

import math
from dataclasses import dataclass, field, replace

from .exceptions import ConfigError

# File formats
TENSOR_MAGIC = b"FFDT"
CHECKPOINT_MAGIC = b"FFDC"
CHECKPOINT_VERSION = 1
DTYPE_CODES: dict[str, int] = {"float32": 0, "float64": 1}

# Environment
THREADS_ENV = "FFDCONV_THREADS"

# Block kinds and the axis each dynamic kind indexes its spatial filters by
BLOCK_KINDS = ("static", "ffd", "ftd", "ddf")
DYNAMIC_KINDS = ("ffd", "ftd", "ddf")
AXIS_FOR_KIND: dict[str, str] = {"ffd": "frequency", "ftd": "time", "ddf": "pixel"}
FILTER_AXES = ("frequency", "time", "pixel")
NORMS = ("batch", "none")
ACTIVATIONS = ("glu", "relu")

# Numerics
FILTER_NORM_EPS = 1e-5
BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1
BCE_CLAMP = 1e-7
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
RAMPUP_SHAPE = 5.0


@dataclass(frozen=True)
class FeatureParams:
    """Log-mel extraction parameters.

    Defaults give 626 frames x 128 bands for 10 s of 16 kHz audio.
    """

    sample_rate: int = 16000
    n_fft: int = 2048
    hop: int = 256
    win: int = 2048
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-6
    window: str = "hann"

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.hop <= 0 or self.n_fft < self.hop:
            raise ConfigError(f"need 0 < hop <= n_fft, got hop={self.hop} n_fft={self.n_fft}")
        if self.win != self.n_fft:
            raise ConfigError(f"window length {self.win} must equal n_fft {self.n_fft}")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin} fmax={self.fmax}"
            )
        if self.log_floor <= 0:
            raise ConfigError(f"log_floor must be positive, got {self.log_floor}")


@dataclass(frozen=True)
class BlockConfig:
    """Configuration of one conv block.

    `frames` and `bands` are the time/frequency extents the block sees; the
    spatial-generating conv of an ffd block spans all frames, that of an ftd
    block spans all bands.
    """

    kind: str
    c_in: int
    c_out: int
    kernel_size: int = 3
    window: int = 3
    use_attention: bool = True
    norm: str = "batch"
    activation: str = "glu"
    frames: int | None = None
    bands: int | None = None
    reduction: int = 4

    def __post_init__(self) -> None:
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"Unknown block kind '{self.kind}' (expected one of {BLOCK_KINDS})")
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigError(f"channel counts must be positive, got {self.c_in}->{self.c_out}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd, got {self.window}")
        if self.norm not in NORMS:
            raise ConfigError(f"Unknown norm '{self.norm}'")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"Unknown activation '{self.activation}'")
        if self.kind == "ffd" and self.frames is None:
            raise ConfigError("ffd blocks need the frame count their generating conv spans")
        if self.kind == "ftd" and self.bands is None:
            raise ConfigError("ftd blocks need the band count their generating conv spans")
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")

    @property
    def is_dynamic(self) -> bool:
        return self.kind in DYNAMIC_KINDS

    @property
    def axis(self) -> str | None:
        return AXIS_FOR_KIND.get(self.kind)

    @property
    def hidden(self) -> int:
        """Width of the channel branch bottleneck."""
        return max(1, self.c_out // self.reduction)


@dataclass(frozen=True)
class ModelConfig:
    """CRNN configuration: conv stack -> frequency collapse -> Bi-GRU -> heads."""

    n_classes: int = 4
    frames: int = 128
    bands: int = 64
    channels: tuple[int, ...] = (8, 16, 16, 16, 16, 16, 16)
    kinds: tuple[str, ...] = ("static", "ffd", "ffd", "ffd", "ffd", "ffd", "ffd")
    time_pool: tuple[int, ...] = (2, 2, 1, 1, 1, 1, 1)
    freq_pool: tuple[int, ...] = (2, 2, 2, 2, 2, 2, 1)
    kernel_size: int = 3
    window: int = 3
    use_attention: bool = True
    norm: str = "batch"
    activation: str = "glu"
    gru_hidden: int = 16
    gru_layers: int = 2
    dtype: str = "float32"

    def __post_init__(self) -> None:
        n = len(self.channels)
        for name in ("kinds", "time_pool", "freq_pool"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} has {len(getattr(self, name))} entries, expected {n}")
        if n == 0:
            raise ConfigError("model needs at least one conv block")
        if self.kinds[0] != "static":
            raise ConfigError("the first conv block must be static")
        if math.prod(self.freq_pool) > self.bands:
            raise ConfigError(
                f"frequency pooling {self.freq_pool} exceeds {self.bands} input bands"
            )
        if math.prod(self.time_pool) > self.frames:
            raise ConfigError(f"time pooling {self.time_pool} exceeds {self.frames} input frames")
        if self.n_classes < 1 or self.gru_hidden < 1 or self.gru_layers < 1:
            raise ConfigError("n_classes, gru_hidden and gru_layers must be positive")
        if self.dtype not in DTYPE_CODES:
            raise ConfigError(f"Unknown dtype '{self.dtype}'")

    def with_variant(self, kind: str) -> "ModelConfig":
        """Return a copy whose blocks 2..n are all of `kind` (block 1 stays static)."""
        if kind not in BLOCK_KINDS:
            raise ConfigError(f"Unknown variant '{kind}'")
        return replace(self, kinds=("static",) + (kind,) * (len(self.channels) - 1))

    def block_configs(self) -> list[BlockConfig]:
        """Per-layer block configs with the extents each layer sees."""
        configs = []
        c_in, frames, bands = 1, self.frames, self.bands
        for i, kind in enumerate(self.kinds):
            configs.append(
                BlockConfig(
                    kind=kind,
                    c_in=c_in,
                    c_out=self.channels[i],
                    kernel_size=self.kernel_size,
                    window=self.window,
                    use_attention=self.use_attention,
                    norm=self.norm,
                    activation=self.activation,
                    frames=frames,
                    bands=bands,
                )
            )
            c_in = self.channels[i]
            frames //= self.time_pool[i]
            bands //= self.freq_pool[i]
        return configs

    @property
    def output_frames(self) -> int:
        frames = self.frames
        for pool in self.time_pool:
            frames //= pool
        return frames


# Full-scale architecture: 626 x 128 input, 7 conv blocks, 2 Bi-GRU layers
FULL_MODEL = ModelConfig(
    n_classes=10,
    frames=626,
    bands=128,
    channels=(16, 32, 64, 128, 128, 128, 128),
    time_pool=(2, 2, 1, 1, 1, 1, 1),
    freq_pool=(2, 2, 2, 2, 2, 2, 2),
    gru_hidden=128,
)

MODEL_PRESETS: dict[str, ModelConfig] = {
    "desk": ModelConfig(),
    "full": FULL_MODEL,
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Frequency-banded synthetic SED benchmark.

    Each class paints events only inside its own band range, so classes differ
    by where in frequency they live rather than by texture.
    """

    n_classes: int = 4
    frames: int = 128
    bands: int = 64
    label_frames: int = 32
    band_ranges: tuple[tuple[int, int], ...] = ((0, 16), (16, 32), (32, 48), (48, 64))
    duration_range: tuple[float, float] = (1.0, 3.0)
    events_per_clip: tuple[int, int] = (1, 3)
    noise_level: float = 0.1
    clip_seconds: float = 10.0

    def __post_init__(self) -> None:
        if len(self.band_ranges) != self.n_classes:
            raise ConfigError(
                f"{len(self.band_ranges)} band ranges given for {self.n_classes} classes"
            )
        for c, (lo, hi) in enumerate(self.band_ranges):
            if not 0 <= lo < hi <= self.bands:
                raise ConfigError(f"band range {lo}..{hi} of class {c} outside [0, {self.bands})")
        lo_d, hi_d = self.duration_range
        if not 0 < lo_d <= hi_d:
            raise ConfigError(f"invalid duration range {self.duration_range}")
        lo_n, hi_n = self.events_per_clip
        if not 0 <= lo_n <= hi_n:
            raise ConfigError(f"invalid events-per-clip range {self.events_per_clip}")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be non-negative")
        if self.label_frames < 1 or self.label_frames > self.frames:
            raise ConfigError(f"label_frames must be in [1, {self.frames}]")

    @property
    def label_hop(self) -> float:
        """Seconds per label frame."""
        return self.clip_seconds / self.label_frames


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation, post-processing and evaluation settings."""

    lr_max: float = 1e-3
    warmup_epochs: int = 10
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    median_length: int = 7
    thresholds: tuple[float, ...] = ()
    weak_weight: float = 0.5
    temperature_start: float = 30.0
    temperature_end: float = 1.0
    temperature_epochs: int = 50
    collar: float = 0.2
    offset_collar_ratio: float = 0.2
    dtc: float = 0.5
    gtc: float = 0.5
    n_train: int = 400
    n_val: int = 100

    def __post_init__(self) -> None:
        if self.lr_max < 0:
            raise ConfigError(f"lr_max must be non-negative, got {self.lr_max}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.median_length < 1 or self.median_length % 2 == 0:
            raise ConfigError(f"median_length must be odd, got {self.median_length}")
        if any(not 0 < t < 1 for t in self.thresholds):
            raise ConfigError(f"thresholds must lie in (0, 1), got {self.thresholds}")
        if self.temperature_start <= 0 or self.temperature_end <= 0:
            raise ConfigError("temperatures must be positive")
        if not (0 < self.dtc <= 1 and 0 < self.gtc <= 1):
            raise ConfigError("dtc and gtc must lie in (0, 1]")
        if self.collar < 0:
            raise ConfigError("collar must be non-negative")

    def class_thresholds(self, n_classes: int) -> tuple[float, ...]:
        """Per-class decision thresholds, defaulting to 0.5."""
        if not self.thresholds:
            return (0.5,) * n_classes
        if len(self.thresholds) != n_classes:
            raise ConfigError(f"{len(self.thresholds)} thresholds given for {n_classes} classes")
        return self.thresholds


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation: subcommand plus the ablation switches."""

    command: str
    config_path: str | None = None
    seed: int = 0
    out_dir: str = "runs"
    variant: str = "ffd"
    window: int = 3
    attention: bool = True
    overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant not in BLOCK_KINDS:
            raise ConfigError(f"Unknown variant '{self.variant}'")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd, got {self.window}")
