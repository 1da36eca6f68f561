"""Synthetic frequency-banded SED benchmark and dataset directories.

Every class paints the same kind of smooth, band-limited pattern, but only
inside its own band range, so a detector has to tell classes apart by where
in frequency the energy sits. Clips are generated independently from
(seed, clip index), which makes datasets reproducible and order-free.

Dataset directory layout:

    features/<name>.ffdt    [T, F] float32 spectrogram
    labels/<name>.ffdt      [T', classes] float32 strong labels
    annotations.tsv         filename, onset, offset, event_label
    clips.csv               clip index
    datapackage.json        Frictionless manifest of the two tables
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SyntheticSpec
from .datapackage import read_dataset_metadata, write_dataset_package
from .exceptions import ConfigError, DataError
from .metrics import EventAnnotation, read_annotations, write_annotations
from .parallel import map_slices
from .tensorio import read_tensor, write_tensor

logger = logging.getLogger(__name__)

EVENT_AMPLITUDE = (0.7, 1.0)
PLACEMENT_ATTEMPTS = 10


def class_names(n_classes: int) -> list[str]:
    return [f"class_{c}" for c in range(n_classes)]


@dataclass
class Dataset:
    """In-memory clips with strong labels and the events that produced them."""

    names: list[str]
    features: np.ndarray
    labels: np.ndarray
    annotations: list[EventAnnotation] = field(default_factory=list)
    label_hop: float = 1.0
    class_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def n_classes(self) -> int:
        return self.labels.shape[2]

    def clip_events(self, name: str) -> list[EventAnnotation]:
        return [e for e in self.annotations if e.filename == name]

    def subset(self, indices: np.ndarray | list[int]) -> "Dataset":
        indices = list(indices)
        kept = {self.names[i] for i in indices}
        return Dataset(
            names=[self.names[i] for i in indices],
            features=self.features[indices],
            labels=self.labels[indices],
            annotations=[e for e in self.annotations if e.filename in kept],
            label_hop=self.label_hop,
            class_names=list(self.class_names),
        )


def frame_centers(count: int, clip_seconds: float) -> np.ndarray:
    """Center time of each of `count` equal frames spanning the clip."""
    hop = clip_seconds / count
    return (np.arange(count) + 0.5) * hop


def _place_events(
    spec: SyntheticSpec, rng: np.random.Generator, name: str
) -> list[EventAnnotation]:
    lo_n, hi_n = spec.events_per_clip
    events: list[EventAnnotation] = []
    for _ in range(int(rng.integers(lo_n, hi_n + 1))):
        label = int(rng.integers(spec.n_classes))
        for _ in range(PLACEMENT_ATTEMPTS):
            duration = float(rng.uniform(*spec.duration_range))
            onset = float(rng.uniform(0.0, spec.clip_seconds - duration))
            candidate = EventAnnotation(label, onset, onset + duration, name)
            clash = any(e.label == label and e.overlap(candidate) > 0 for e in events)
            if not clash:
                events.append(candidate)
                break
    events.sort(key=lambda e: (e.onset, e.label))
    return events


def synth_clip(
    spec: SyntheticSpec, seed: int, index: int, name: str | None = None
) -> tuple[np.ndarray, np.ndarray, list[EventAnnotation]]:
    """One clip: (features [T, F], labels [T', classes], events)."""
    name = name or f"clip_{index:05d}"
    rng = np.random.default_rng([seed, index])
    features = rng.uniform(0.0, spec.noise_level, size=(spec.frames, spec.bands))
    events = _place_events(spec, rng, name)

    feature_times = frame_centers(spec.frames, spec.clip_seconds)
    label_times = frame_centers(spec.label_frames, spec.clip_seconds)
    labels = np.zeros((spec.label_frames, spec.n_classes))
    for event in events:
        lo, hi = spec.band_ranges[event.label]
        width = hi - lo
        profile = 0.75 + 0.25 * np.sin(np.pi * (np.arange(width) + 0.5) / width)
        profile *= rng.uniform(0.9, 1.0, size=width)
        amplitude = rng.uniform(*EVENT_AMPLITUDE)
        inside = (feature_times >= event.onset) & (feature_times < event.offset)
        position = (feature_times[inside] - event.onset) / event.duration
        envelope = 0.6 + 0.4 * np.sin(np.pi * position)
        painted = amplitude * envelope[:, None] * profile[None, :]
        features[inside, lo:hi] = np.maximum(features[inside, lo:hi], painted)
        active = (label_times >= event.onset) & (label_times < event.offset)
        labels[active, event.label] = 1.0
    return features.astype(np.float32), labels.astype(np.float32), events


def synth_dataset(
    spec: SyntheticSpec, n_clips: int, seed: int, offset: int = 0
) -> Dataset:
    """Generate `n_clips` clips numbered from `offset`, reproducible from `seed`."""
    if spec.duration_range[1] > spec.clip_seconds:
        raise ConfigError(
            f"event duration up to {spec.duration_range[1]} s exceeds clip length "
            f"{spec.clip_seconds} s"
        )
    if n_clips < 0:
        raise ConfigError(f"clip count must be non-negative, got {n_clips}")
    clips = map_slices(lambda i: synth_clip(spec, seed, offset + i), n_clips)
    names = [f"clip_{offset + i:05d}" for i in range(n_clips)]
    features = np.stack([c[0] for c in clips]) if clips else np.zeros(
        (0, spec.frames, spec.bands), dtype=np.float32
    )
    labels = np.stack([c[1] for c in clips]) if clips else np.zeros(
        (0, spec.label_frames, spec.n_classes), dtype=np.float32
    )
    annotations = [event for c in clips for event in c[2]]
    logger.debug("synthesised %d clips with %d events (seed %d)", n_clips, len(annotations), seed)
    return Dataset(
        names=names,
        features=features,
        labels=labels,
        annotations=annotations,
        label_hop=spec.label_hop,
        class_names=class_names(spec.n_classes),
    )


def band_energy_accuracy(dataset: Dataset, spec: SyntheticSpec) -> float:
    """Frame accuracy of a per-band mean-energy threshold classifier.

    For each label frame and class, the mean energy inside the class band range
    over the frames the label frame covers is compared with the midpoint between
    the noise mean and the weakest painted event level.
    """
    per_label = spec.frames // spec.label_frames
    usable = per_label * spec.label_frames
    pooled = dataset.features[:, :usable].reshape(
        len(dataset), spec.label_frames, per_label, spec.bands
    ).mean(axis=2)
    threshold = 0.5 * (spec.noise_level / 2 + EVENT_AMPLITUDE[0] * 0.6 * 0.75 * 0.9)
    correct = 0
    for c, (lo, hi) in enumerate(spec.band_ranges):
        predicted = pooled[:, :, lo:hi].mean(axis=2) > threshold
        correct += int(np.sum(predicted == (dataset.labels[:, :, c] > 0.5)))
    return correct / (len(dataset) * spec.label_frames * spec.n_classes)


# -----------------------------------------------------------------------------
# Dataset directories
# -----------------------------------------------------------------------------


def write_dataset(dataset: Dataset, directory: Path) -> None:
    """Write features, labels, annotations and the Frictionless manifest."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    (directory / "labels").mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(dataset.names):
        write_tensor(directory / "features" / f"{name}.ffdt", dataset.features[i])
        write_tensor(directory / "labels" / f"{name}.ffdt", dataset.labels[i])
    write_annotations(directory / "annotations.tsv", dataset.annotations, dataset.class_names)
    with open(directory / "clips.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["filename", "features", "labels", "events"])
        for name in dataset.names:
            writer.writerow(
                [name, f"features/{name}.ffdt", f"labels/{name}.ffdt",
                 len(dataset.clip_events(name))]
            )
    write_dataset_package(directory, dataset.class_names, dataset.label_hop)


def read_dataset(directory: Path) -> Dataset:
    """Load a dataset directory written by `write_dataset`."""
    directory = Path(directory)
    index_path = directory / "clips.csv"
    if not index_path.exists():
        raise DataError(f"not a dataset directory (no clips.csv): {directory}")
    names_of_classes, label_hop = read_dataset_metadata(directory)
    with open(index_path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    names = [row["filename"] for row in rows]
    features = [read_tensor(directory / row["features"]).numpy() for row in rows]
    labels = [read_tensor(directory / row["labels"]).numpy() for row in rows]
    if not names:
        raise DataError(f"dataset {directory} has no clips")
    annotations = read_annotations(directory / "annotations.tsv", names_of_classes)
    return Dataset(
        names=names,
        features=np.stack(features),
        labels=np.stack(labels),
        annotations=annotations,
        label_hop=label_hop,
        class_names=names_of_classes,
    )
