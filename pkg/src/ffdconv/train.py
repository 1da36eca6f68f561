"""Supervised training and evaluation on strong labels.

Loss is BCE on frame posteriors plus a weighted BCE on clip posteriors
against clip labels (max of the strong labels over time). Adam with bias
correction; the learning rate ramps up as exp(-5 (1 - e / warmup)^2) and the
spatial-filter softmax temperature anneals linearly.
"""

import csv
import json
import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ADAM_BETAS, ADAM_EPS, BCE_CLAMP, RAMPUP_SHAPE, TrainConfig
from .datapackage import write_report_package
from .exceptions import NumericError
from .metrics import (
    DetectionCounts,
    IntersectionCounts,
    decode_events,
    eb_counts,
    frame_f1,
    ib_counts,
    median_filter,
)
from .model import ModelState, model_forward, predict, save_checkpoint
from .ops import add, scale
from .synth import Dataset
from .tensor import Parameter, Tape, Tensor, as_tensor, emit

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.ffdc"
METRICS_FILE = "metrics.csv"
TRAIN_LOG_FILE = "train_log.jsonl"
METRICS_COLUMNS = ("epoch", "loss", "eb_f1", "ib_f1")
SCORE_COLUMNS = ("eb_precision", "eb_recall", "eb_f1", "ib_f1", "frame_f1")
COUNT_COLUMNS = ("eb_tp", "eb_fp", "eb_fn", "ib_pred", "ib_passing", "ib_gt", "ib_detected")


# -----------------------------------------------------------------------------
# Loss and optimiser
# -----------------------------------------------------------------------------


def bce_loss(pred: Tensor | np.ndarray, target: Tensor | np.ndarray) -> Tensor:
    """Mean binary cross-entropy with log arguments clamped at BCE_CLAMP."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    p = np.clip(pred.data.astype(np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = target.data.astype(np.float64)
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    out = np.asarray(loss, dtype=pred.dtype)

    def vjp(g: np.ndarray, saved: tuple) -> tuple:
        clipped, tgt, raw = saved
        inside = (raw > BCE_CLAMP) & (raw < 1.0 - BCE_CLAMP)
        grad = (clipped - tgt) / (clipped * (1.0 - clipped)) / clipped.size
        grad = np.where(inside, grad, 0.0) * g
        return (grad.astype(raw.dtype), None)

    return emit("bce", (pred, target), out, vjp, (p, t, pred.data))


@dataclass
class AdamState:
    """First/second moment estimates per parameter name and the step count."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: list[Parameter],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam update using each parameter's accumulated grad."""
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for p in params:
        g = p.grad.astype(np.float64)
        m = state.m.setdefault(p.name, np.zeros(p.shape))
        v = state.v.setdefault(p.name, np.zeros(p.shape))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        p.value -= update.astype(p.value.dtype)


def rampup_factor(epoch: int, warmup_epochs: int) -> float:
    """exp(-5 (1 - min(epoch / warmup, 1))^2); 1 when there is no warmup."""
    if warmup_epochs <= 0:
        return 1.0
    progress = min(epoch / warmup_epochs, 1.0)
    return float(np.exp(-RAMPUP_SHAPE * (1.0 - progress) ** 2))


def learning_rate(epoch: int, config: TrainConfig) -> float:
    return config.lr_max * rampup_factor(epoch, config.warmup_epochs)


def temperature_at(epoch: int, config: TrainConfig) -> float:
    """Linear anneal from temperature_start to temperature_end."""
    if config.temperature_epochs <= 0:
        return config.temperature_end
    progress = min(epoch / config.temperature_epochs, 1.0)
    start, end = config.temperature_start, config.temperature_end
    return start + (end - start) * progress


# -----------------------------------------------------------------------------
# Evaluation
# -----------------------------------------------------------------------------


@dataclass
class Evaluation:
    """Scores and per-class counts of one evaluation pass."""

    eb_precision: float
    eb_recall: float
    eb_f1: float
    ib_f1: float
    frame_f1: float
    eb_counts: dict[int, DetectionCounts]
    ib_counts: dict[int, IntersectionCounts]


def evaluate_predictions(
    strong: np.ndarray, dataset: Dataset, config: TrainConfig
) -> Evaluation:
    """Median-filter, threshold and decode posteriors, then score against annotations."""
    thresholds = config.class_thresholds(dataset.n_classes)
    predictions = []
    active = np.zeros_like(strong, dtype=bool)
    for i, name in enumerate(dataset.names):
        smoothed = median_filter(strong[i], config.median_length)
        active[i] = smoothed > np.asarray(thresholds)[None, :]
        predictions += decode_events(smoothed, thresholds, dataset.label_hop, name)

    eb = eb_counts(predictions, dataset.annotations, config.collar, config.offset_collar_ratio)
    ib = ib_counts(predictions, dataset.annotations, config.dtc, config.gtc)
    eb_total = DetectionCounts()
    for counts in eb.values():
        eb_total += counts
    ib_total = IntersectionCounts()
    for counts in ib.values():
        ib_total += counts
    return Evaluation(
        eb_precision=eb_total.precision,
        eb_recall=eb_total.recall,
        eb_f1=eb_total.f1,
        ib_f1=ib_total.f1,
        frame_f1=frame_f1(active, dataset.labels),
        eb_counts=eb,
        ib_counts=ib,
    )


def evaluate_model(state: ModelState, dataset: Dataset, config: TrainConfig) -> Evaluation:
    strong, _ = predict(state, dataset.features[:, None], config.batch_size)
    return evaluate_predictions(strong, dataset, config)


def write_evaluation(
    directory: Path, evaluation: Evaluation, class_names: list[str]
) -> None:
    """metrics.csv (one row of scores) and class_counts.csv, with a Frictionless manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / METRICS_FILE, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        writer.writerow([f"{getattr(evaluation, metric):.6f}" for metric in SCORE_COLUMNS])
    with open(directory / "class_counts.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("event_label",) + COUNT_COLUMNS)
        for c, name in enumerate(class_names):
            eb = evaluation.eb_counts.get(c, DetectionCounts())
            ib = evaluation.ib_counts.get(c, IntersectionCounts())
            writer.writerow(
                [name, eb.tp, eb.fp, eb.fn, ib.n_pred, ib.passing, ib.n_gt, ib.detected]
            )
    write_report_package(
        directory,
        "ffdconv-evaluation",
        [
            ("metrics", METRICS_FILE, [(metric, "number") for metric in SCORE_COLUMNS]),
            (
                "class_counts",
                "class_counts.csv",
                [("event_label", "string")]
                + [(column, "integer") for column in COUNT_COLUMNS],
            ),
        ],
    )


# -----------------------------------------------------------------------------
# Training
# -----------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    temperature: float
    eb_f1: float
    ib_f1: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    final: Evaluation | None = None
    checkpoint: Path | None = None


def _batch_loss(
    state: ModelState, features: np.ndarray, labels: np.ndarray, config: TrainConfig, tape: Tape
) -> Tensor:
    out = model_forward(features[:, None], state, tape, training=True)
    strong_loss = bce_loss(out.strong, labels)
    weak_loss = bce_loss(out.weak, labels.max(axis=1))
    return add(strong_loss, scale(weak_loss, config.weak_weight))


def train_loop(
    state: ModelState,
    train_set: Dataset,
    val_set: Dataset,
    config: TrainConfig,
    out_dir: Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Minibatch Adam over `config.epochs` epochs with per-epoch validation.

    With `out_dir`, writes the checkpoint, metrics.csv and train_log.jsonl there.

    Raises:
        NumericError: The loss (or any op on the way) went non-finite
    """
    rng = np.random.default_rng(config.seed)
    adam = AdamState()
    history: list[EpochRecord] = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / TRAIN_LOG_FILE).write_text("", encoding="utf-8")

    for epoch in range(config.epochs):
        lr = learning_rate(epoch, config)
        temperature = temperature_at(epoch, config)
        state.set_temperature(temperature)
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start : start + config.batch_size])
            tape = Tape()
            try:
                loss = _batch_loss(
                    state, train_set.features[idx], train_set.labels[idx], config, tape
                )
            except NumericError as e:
                raise NumericError(
                    f"training diverged at epoch {epoch}, batch {start // config.batch_size}: {e}",
                    details={"epoch": epoch, **e.details},
                )
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"loss is {value} at epoch {epoch}", details={"epoch": epoch})
            state.zero_grad()
            tape.backward(loss)
            adam_step(state.parameters(), adam, lr)
            total += value * len(idx)
            seen += len(idx)

        evaluation = evaluate_model(state, val_set, config)
        record = EpochRecord(
            epoch=epoch,
            loss=total / max(seen, 1),
            lr=lr,
            temperature=temperature,
            eb_f1=evaluation.eb_f1,
            ib_f1=evaluation.ib_f1,
        )
        history.append(record)
        logger.debug(
            "epoch %d: loss %.5f lr %.2e T %.2f eb %.4f ib %.4f",
            epoch, record.loss, lr, temperature, record.eb_f1, record.ib_f1,
        )
        if out_dir is not None:
            with open(out_dir / TRAIN_LOG_FILE, "a", encoding="utf-8") as log_file:
                log_file.write(json.dumps(asdict(record)) + "\n")
        if on_epoch is not None:
            on_epoch(record)

    result = TrainResult(history=history)
    if out_dir is not None:
        result.checkpoint = out_dir / CHECKPOINT_FILE
        save_checkpoint(state, result.checkpoint)
        write_history(out_dir / METRICS_FILE, history)
    return result


def write_history(path: Path, history: list[EpochRecord]) -> None:
    """Metrics report CSV: epoch, loss, eb_f1, ib_f1."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for record in history:
            writer.writerow(
                [record.epoch, f"{record.loss:.8f}", f"{record.eb_f1:.6f}", f"{record.ib_f1:.6f}"]
            )
