"""Per-layer activation dumps and band trend statistics.

For one clip, every conv block's pooled output is written as an FFDT tensor
[C, T, F]. The channel-averaged map of each layer is flattened into a long
band-trace table (layer, frame, band, value), and a temporal coherence score
per (layer, band) is the mean absolute frame-to-frame change divided by the
band's standard deviation over time. Smoother bands score lower.
"""

import csv
import logging
from pathlib import Path

import numpy as np

from .config import FeatureParams
from .datapackage import write_report_package
from .exceptions import DataError, DimensionError
from .features import featurize_file
from .model import ModelState, model_forward
from .tensor import Tensor
from .tensorio import read_tensor, write_tensor

logger = logging.getLogger(__name__)

TRACE_FILE = "band_traces.csv"
COHERENCE_FILE = "coherence.csv"


def load_clip(path: Path, feature_params: FeatureParams | None = None) -> np.ndarray:
    """[T, F] features from an FFDT feature file or a WAV clip."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"clip not found: {path}")
    if path.suffix.lower() == ".wav":
        return featurize_file(path, feature_params or FeatureParams()).values.numpy()
    values = read_tensor(path).numpy()
    if values.ndim != 2:
        raise DimensionError(f"{path}: expected [T, F] features, got {values.shape}", axis="input")
    return values


def layer_activations(state: ModelState, features: np.ndarray) -> list[np.ndarray]:
    """Evaluation-mode outputs [C, T, F] of each block (after pooling) for one clip."""
    captured: list[Tensor] = []
    model_forward(np.asarray(features)[None, None], state, activations=captured)
    return [layer.numpy()[0] for layer in captured]


def band_means(activation: np.ndarray) -> np.ndarray:
    """Channel average of [C, T, F] -> [T, F]."""
    return activation.mean(axis=0)


def temporal_coherence(trace: np.ndarray) -> np.ndarray:
    """Per-band mean |x[t+1] - x[t]| / std_t(x) of a [T, F] map; 0 for flat bands."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.shape[0] < 2:
        return np.zeros(trace.shape[1])
    change = np.abs(np.diff(trace, axis=0)).mean(axis=0)
    spread = trace.std(axis=0)
    return np.divide(change, spread, out=np.zeros_like(change), where=spread > 0)


def dump_activations(
    state: ModelState, features: np.ndarray, out_dir: Path
) -> list[Path]:
    """Write layer_<i>.ffdt, band_traces.csv, coherence.csv and their manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = layer_activations(state, features)
    written = []
    for i, activation in enumerate(layers):
        path = out_dir / f"layer_{i}.ffdt"
        write_tensor(path, activation)
        written.append(path)

    with open(out_dir / TRACE_FILE, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["layer", "frame", "band", "value"])
        for i, activation in enumerate(layers):
            trace = band_means(activation)
            for t in range(trace.shape[0]):
                for band in range(trace.shape[1]):
                    writer.writerow([i, t, band, f"{trace[t, band]:.8g}"])

    with open(out_dir / COHERENCE_FILE, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["layer", "band", "coherence"])
        for i, activation in enumerate(layers):
            for band, score in enumerate(temporal_coherence(band_means(activation))):
                writer.writerow([i, band, f"{score:.8g}"])

    write_report_package(
        out_dir,
        "ffdconv-activations",
        [
            (
                "band_traces",
                TRACE_FILE,
                [("layer", "integer"), ("frame", "integer"), ("band", "integer"),
                 ("value", "number")],
            ),
            (
                "coherence",
                COHERENCE_FILE,
                [("layer", "integer"), ("band", "integer"), ("coherence", "number")],
            ),
        ],
    )
    logger.debug("dumped %d layers to %s", len(layers), out_dir)
    return written + [out_dir / TRACE_FILE, out_dir / COHERENCE_FILE]
