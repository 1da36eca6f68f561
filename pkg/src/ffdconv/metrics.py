"""Post-processing and event-level metrics.

Frame posteriors are median-filtered per class, thresholded per class and
merged into events. Events are scored with a collar-based F1 (greedy
one-to-one matching) and an intersection-based F1 (detection and ground-truth
tolerance criteria). Matching never crosses clips or classes.
"""

import csv
import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter as _ndimage_median

from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ("filename", "onset", "offset", "event_label")


@dataclass(frozen=True)
class EventAnnotation:
    """One event: class id, onset and offset in seconds, and the clip it belongs to."""

    label: int
    onset: float
    offset: float
    filename: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.onset < self.offset:
            raise DataError(
                f"invalid event interval ({self.onset}, {self.offset}) in '{self.filename}'"
            )

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def overlap(self, other: "EventAnnotation") -> float:
        return max(0.0, min(self.offset, other.offset) - max(self.onset, other.onset))


@dataclass
class DetectionCounts:
    """Matched/unmatched counts; F1 is 0 whenever it is undefined."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "DetectionCounts") -> "DetectionCounts":
        return DetectionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class IntersectionCounts:
    """Per-prediction and per-ground-truth tallies of intersection-based matching."""

    n_pred: int = 0
    passing: int = 0
    n_gt: int = 0
    detected: int = 0

    def __add__(self, other: "IntersectionCounts") -> "IntersectionCounts":
        return IntersectionCounts(
            self.n_pred + other.n_pred,
            self.passing + other.passing,
            self.n_gt + other.n_gt,
            self.detected + other.detected,
        )

    @property
    def precision(self) -> float:
        return self.passing / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.detected / self.n_gt if self.n_gt else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


# -----------------------------------------------------------------------------
# Post-processing
# -----------------------------------------------------------------------------


def median_filter(probs: np.ndarray, length: int) -> np.ndarray:
    """Per-class sliding median over time with edge replication.

    Args:
        probs: [T] or [T, classes] posteriors
        length: Odd window length in frames
    """
    if length < 1 or length % 2 == 0:
        raise ConfigError(f"median filter length must be odd, got {length}")
    probs = np.asarray(probs)
    if length == 1:
        return probs.copy()
    size = (length,) + (1,) * (probs.ndim - 1)
    return _ndimage_median(probs, size=size, mode="nearest")


def decode_events(
    probs: np.ndarray,
    thresholds: Sequence[float] | float,
    hop_seconds: float,
    filename: str = "",
) -> list[EventAnnotation]:
    """Binarize [T, classes] posteriors and merge runs of active frames into events.

    A run covering frames a..b becomes (a * hop, (b + 1) * hop).
    """
    probs = np.asarray(probs)
    if probs.ndim == 1:
        probs = probs[:, None]
    n_classes = probs.shape[1]
    limits = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), (n_classes,))
    active = probs > limits[None, :]
    events = []
    for label in range(n_classes):
        edges = np.diff(np.concatenate([[0], active[:, label].astype(np.int8), [0]]))
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1)
        for start, stop in zip(starts, stops):
            events.append(
                EventAnnotation(label, start * hop_seconds, stop * hop_seconds, filename)
            )
    events.sort(key=lambda e: (e.onset, e.label))
    return events


def _group(events: Iterable[EventAnnotation]) -> dict[tuple[str, int], list[EventAnnotation]]:
    groups: dict[tuple[str, int], list[EventAnnotation]] = defaultdict(list)
    for event in events:
        groups[(event.filename, event.label)].append(event)
    for group in groups.values():
        group.sort(key=lambda e: (e.onset, e.offset))
    return groups


# -----------------------------------------------------------------------------
# Collar-based (event-based) F1
# -----------------------------------------------------------------------------


def eb_counts(
    pred: Iterable[EventAnnotation],
    gt: Iterable[EventAnnotation],
    collar: float = 0.2,
    offset_ratio: float = 0.2,
) -> dict[int, DetectionCounts]:
    """Per-class tp/fp/fn of greedy one-to-one collar matching in onset order."""
    if collar < 0:
        raise ConfigError(f"collar must be non-negative, got {collar}")
    pred_groups, gt_groups = _group(pred), _group(gt)
    counts: dict[int, DetectionCounts] = defaultdict(DetectionCounts)
    for key in sorted(set(pred_groups) | set(gt_groups)):
        preds, truths = pred_groups.get(key, []), gt_groups.get(key, [])
        used = [False] * len(truths)
        tp = 0
        for p in preds:
            for i, g in enumerate(truths):
                if used[i]:
                    continue
                offset_collar = max(collar, offset_ratio * g.duration)
                if abs(p.onset - g.onset) <= collar and abs(p.offset - g.offset) <= offset_collar:
                    used[i] = True
                    tp += 1
                    break
        counts[key[1]] += DetectionCounts(tp, len(preds) - tp, len(truths) - tp)
    return dict(counts)


def eb_f1(
    pred: Iterable[EventAnnotation],
    gt: Iterable[EventAnnotation],
    collar: float = 0.2,
    offset_ratio: float = 0.2,
) -> tuple[float, float, float]:
    """Micro-averaged (precision, recall, F1) of collar-based matching."""
    total = DetectionCounts()
    for counts in eb_counts(pred, gt, collar, offset_ratio).values():
        total += counts
    return total.precision, total.recall, total.f1


# -----------------------------------------------------------------------------
# Intersection-based F1
# -----------------------------------------------------------------------------


def ib_counts(
    pred: Iterable[EventAnnotation],
    gt: Iterable[EventAnnotation],
    dtc: float = 0.5,
    gtc: float = 0.5,
) -> dict[int, IntersectionCounts]:
    """Per-class tallies of intersection-based matching.

    A prediction passes when the fraction of it covered by same-class ground
    truth is at least dtc; a ground truth is detected when passing predictions
    cover at least gtc of it.
    """
    if not (0 < dtc <= 1 and 0 < gtc <= 1):
        raise ConfigError(f"dtc and gtc must lie in (0, 1], got {dtc}, {gtc}")
    pred_groups, gt_groups = _group(pred), _group(gt)
    counts: dict[int, IntersectionCounts] = defaultdict(IntersectionCounts)
    for key in sorted(set(pred_groups) | set(gt_groups)):
        preds, truths = pred_groups.get(key, []), gt_groups.get(key, [])
        passing = [p for p in preds if np.sum([p.overlap(g) for g in truths]) >= dtc * p.duration]
        detected = 0
        for g in truths:
            covered = np.sum([g.overlap(p) for p in passing])
            if covered >= gtc * g.duration:
                detected += 1
        counts[key[1]] += IntersectionCounts(len(preds), len(passing), len(truths), detected)
    return dict(counts)


def ib_f1(
    pred: Iterable[EventAnnotation],
    gt: Iterable[EventAnnotation],
    dtc: float = 0.5,
    gtc: float = 0.5,
) -> float:
    """Micro-averaged intersection-based F1."""
    total = IntersectionCounts()
    for counts in ib_counts(pred, gt, dtc, gtc).values():
        total += counts
    return total.f1


def frame_f1(active: np.ndarray, labels: np.ndarray) -> float:
    """Micro F1 over (frame, class) cells of binary predictions against labels."""
    active, labels = np.asarray(active, dtype=bool), np.asarray(labels) > 0.5
    counts = DetectionCounts(
        tp=int(np.sum(active & labels)),
        fp=int(np.sum(active & ~labels)),
        fn=int(np.sum(~active & labels)),
    )
    return counts.f1


# -----------------------------------------------------------------------------
# Annotation files
# -----------------------------------------------------------------------------


def write_annotations(
    path: Path, events: Iterable[EventAnnotation], class_names: Sequence[str]
) -> None:
    """Write a strong-label TSV: filename, onset, offset, event_label."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for event in events:
            writer.writerow(
                [event.filename, f"{event.onset:.6f}", f"{event.offset:.6f}",
                 class_names[event.label]]
            )


def read_annotations(path: Path, class_names: Sequence[str]) -> list[EventAnnotation]:
    """Read a strong-label TSV written by `write_annotations`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotation file not found: {path}")
    index = {name: i for i, name in enumerate(class_names)}
    events = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header) != ANNOTATION_COLUMNS:
            raise DataError(f"{path}: expected header {'/'.join(ANNOTATION_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            filename, onset, offset, label = row
            if label not in index:
                raise DataError(f"{path}:{lineno}: unknown event label '{label}'")
            try:
                events.append(EventAnnotation(index[label], float(onset), float(offset), filename))
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}")
    return events
