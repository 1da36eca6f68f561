"""Pytest fixtures for ffdconv tests."""

from pathlib import Path

import numpy as np
import pytest

from ffdconv.model import init_model, save_checkpoint
from ffdconv.synth import Dataset, synth_dataset, write_dataset

from .fixtures.builders import TINY_MODEL, TINY_SYNTH, TINY_TRAIN, write_config


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for random test inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset() -> Dataset:
    """Four synthetic clips matching the tiny model."""
    return synth_dataset(TINY_SYNTH, TINY_TRAIN.n_train, seed=0)


@pytest.fixture
def tiny_val_dataset() -> Dataset:
    """Two held-out synthetic clips."""
    return synth_dataset(TINY_SYNTH, TINY_TRAIN.n_val, seed=0, offset=TINY_TRAIN.n_train)


@pytest.fixture
def dataset_dir(tmp_path: Path, tiny_dataset: Dataset) -> Path:
    """A dataset directory written by write_dataset."""
    directory = tmp_path / "dataset"
    write_dataset(tiny_dataset, directory)
    return directory


@pytest.fixture
def tiny_config_file(tmp_path: Path) -> Path:
    """Config file describing the tiny synth/model/train setup."""
    return write_config(tmp_path / "tiny.conf")


@pytest.fixture
def tiny_checkpoint(tmp_path: Path) -> Path:
    """Checkpoint of an untrained tiny model."""
    path = tmp_path / "ckpt" / "model.ffdc"
    save_checkpoint(init_model(TINY_MODEL, seed=0), path)
    return path
