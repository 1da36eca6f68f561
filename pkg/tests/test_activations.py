"""Tests for activation dumps and band coherence."""

import numpy as np
import pytest

from ffdconv.activations import (
    band_means,
    dump_activations,
    layer_activations,
    load_clip,
    temporal_coherence,
)
from ffdconv.datapackage import validate_package
from ffdconv.exceptions import DataError, DimensionError
from ffdconv.model import init_model
from ffdconv.tensorio import write_tensor

from .fixtures.builders import TINY_MODEL


class TestLoadClip:
    """Tests for reading a clip to dump."""

    def test_feature_file(self, tmp_path, tiny_dataset):
        """Test an FFDT feature file is read as [T, F]."""
        path = tmp_path / "clip.ffdt"
        write_tensor(path, tiny_dataset.features[0])

        np.testing.assert_array_equal(load_clip(path), tiny_dataset.features[0])

    def test_wrong_rank(self, tmp_path):
        """Test a tensor that is not [T, F] is a dimension error."""
        path = tmp_path / "clip.ffdt"
        write_tensor(path, np.zeros((1, 32, 16), dtype=np.float32))

        with pytest.raises(DimensionError):
            load_clip(path)

    def test_missing(self, tmp_path):
        """Test a missing clip is a data error."""
        with pytest.raises(DataError, match="clip not found"):
            load_clip(tmp_path / "absent.wav")


class TestCoherence:
    """Tests for band statistics."""

    def test_band_means(self):
        """Test the channel average of [C, T, F]."""
        activation = np.stack([np.zeros((2, 3)), np.full((2, 3), 4.0)])

        np.testing.assert_array_equal(band_means(activation), np.full((2, 3), 2.0))

    def test_flat_band_scores_zero(self):
        """Test a constant band has coherence 0 rather than NaN."""
        trace = np.column_stack([np.ones(5), [0.0, 1.0, 0.0, 1.0, 0.0]])

        scores = temporal_coherence(trace)

        assert scores[0] == 0.0
        assert scores[1] == pytest.approx(1.0 / np.std([0.0, 1.0, 0.0, 1.0, 0.0]))

    def test_smooth_band_scores_lower(self):
        """Test a slow ramp scores below an alternating band."""
        t = np.arange(20.0)
        trace = np.column_stack([t, (-1.0) ** t])

        scores = temporal_coherence(trace)

        assert scores[0] < scores[1]

    def test_single_frame(self):
        """Test fewer than two frames give zeros."""
        np.testing.assert_array_equal(temporal_coherence(np.ones((1, 4))), np.zeros(4))


class TestDumpActivations:
    """Tests for the per-layer dump."""

    def test_layer_shapes(self, tiny_dataset):
        """Test one [C, T, F] map per block, after pooling."""
        layers = layer_activations(init_model(TINY_MODEL, 0), tiny_dataset.features[0])

        assert [a.shape for a in layers] == [(4, 16, 8), (4, 8, 4)]

    def test_files(self, tmp_path, tiny_dataset):
        """Test the layer tensors, trace tables and a valid manifest are written."""
        out = tmp_path / "dump"

        written = dump_activations(init_model(TINY_MODEL, 0), tiny_dataset.features[0], out)

        assert [p.name for p in written] == [
            "layer_0.ffdt",
            "layer_1.ffdt",
            "band_traces.csv",
            "coherence.csv",
        ]
        assert len((out / "band_traces.csv").read_text().splitlines()) == 1 + 16 * 8 + 8 * 4
        assert len((out / "coherence.csv").read_text().splitlines()) == 1 + 8 + 4
        assert validate_package(out) == []
