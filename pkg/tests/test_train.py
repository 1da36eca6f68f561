"""Tests for the loss, optimiser, schedules and the training loop."""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from ffdconv.config import TrainConfig
from ffdconv.datapackage import validate_package
from ffdconv.exceptions import NumericError
from ffdconv.metrics import EventAnnotation
from ffdconv.model import init_model, load_checkpoint
from ffdconv.synth import Dataset, synth_dataset
from ffdconv.tensor import Parameter, Tape
from ffdconv.train import (
    AdamState,
    adam_step,
    bce_loss,
    evaluate_predictions,
    learning_rate,
    rampup_factor,
    temperature_at,
    train_loop,
    write_evaluation,
)

from .fixtures.builders import TINY_MODEL, TINY_SYNTH, TINY_TRAIN


def single_event_dataset() -> Dataset:
    """One clip, one class, an event over label frames 10..19 at hop 0.064 s."""
    labels = np.zeros((1, 40, 1), dtype=np.float32)
    labels[0, 10:20, 0] = 1.0
    return Dataset(
        names=["a"],
        features=np.zeros((1, 40, 4), dtype=np.float32),
        labels=labels,
        annotations=[EventAnnotation(0, 0.64, 1.28, "a")],
        label_hop=0.064,
        class_names=["dog"],
    )


class TestBceLoss:
    """Tests for binary cross-entropy."""

    def test_half_probability(self):
        """Test predicting 0.5 costs ln 2 whatever the target."""
        loss = bce_loss(np.array([0.5, 0.5]), np.array([0.0, 1.0]))

        assert loss.item() == pytest.approx(np.log(2.0))

    def test_clamped(self):
        """Test a confident wrong prediction stays finite."""
        loss = bce_loss(np.array([0.0]), np.array([1.0]))

        assert loss.item() == pytest.approx(-np.log(1e-7))

    def test_gradient(self):
        """Test dL/dp = (p - t) / (p (1 - p)) / n."""
        p = Parameter("p", np.array([0.25, 0.5]))
        tape = Tape()
        tape.backward(bce_loss(tape.param(p), np.array([1.0, 0.0])))

        np.testing.assert_allclose(p.grad, [-0.75 / 0.1875 / 2, 0.5 / 0.25 / 2])

    def test_shape_mismatch(self):
        """Test predictions and targets must have equal shapes."""
        with pytest.raises(ValueError):
            bce_loss(np.zeros(2), np.zeros(3))


class TestAdam:
    """Tests for the optimiser step."""

    def test_first_step_moves_by_learning_rate(self):
        """Test the bias-corrected first step is -lr * sign(g)."""
        p = Parameter("w", np.array([0.0, 0.0]))
        p.grad = np.array([1.0, -3.0])

        adam_step([p], AdamState(), lr=0.01)

        np.testing.assert_allclose(p.value, [-0.01, 0.01], rtol=1e-6)

    def test_moments_are_tracked_per_name(self):
        """Test the step counter and moment buffers advance."""
        p = Parameter("w", np.array([1.0]))
        p.grad = np.array([2.0])
        state = AdamState()
        adam_step([p], state, lr=0.1)
        adam_step([p], state, lr=0.1)

        assert state.step == 2
        assert set(state.m) == {"w"}


class TestSchedules:
    """Tests for learning-rate ramp-up and temperature annealing."""

    def test_rampup_starts_at_exp_minus_five(self):
        """Test the ramp starts at exp(-5) and reaches 1 at the warmup end."""
        assert rampup_factor(0, 10) == pytest.approx(np.exp(-5.0))
        assert rampup_factor(10, 10) == 1.0
        assert rampup_factor(25, 10) == 1.0

    def test_rampup_is_monotone(self):
        """Test the factor never decreases."""
        factors = [rampup_factor(e, 10) for e in range(15)]

        assert factors == sorted(factors)

    def test_no_warmup(self):
        """Test a zero-length warmup starts at full rate."""
        assert learning_rate(0, TrainConfig(warmup_epochs=0, lr_max=0.01)) == 0.01

    def test_temperature_anneals_linearly(self):
        """Test the temperature runs from start to end and then holds."""
        config = TrainConfig(temperature_start=30.0, temperature_end=1.0, temperature_epochs=10)

        assert temperature_at(0, config) == 30.0
        assert temperature_at(5, config) == pytest.approx(15.5)
        assert temperature_at(50, config) == 1.0

    def test_default_run_stops_before_full_anneal(self):
        """Test the default 30 epochs end at temperature 13.18, short of the target 1."""
        config = TrainConfig()

        assert temperature_at(config.epochs - 1, config) == pytest.approx(13.18)
        assert temperature_at(28, TrainConfig(temperature_epochs=29)) == pytest.approx(2.0)
        assert temperature_at(29, TrainConfig(temperature_epochs=29)) == 1.0


class TestEvaluatePredictions:
    """Tests for scoring posteriors against annotations."""

    def test_perfect_posteriors(self):
        """Test posteriors equal to the labels score 1 everywhere."""
        dataset = single_event_dataset()
        config = replace(TINY_TRAIN, median_length=3)

        evaluation = evaluate_predictions(dataset.labels.astype(float), dataset, config)

        assert evaluation.eb_f1 == pytest.approx(1.0)
        assert evaluation.ib_f1 == pytest.approx(1.0)
        assert evaluation.frame_f1 == pytest.approx(1.0)

    def test_silent_posteriors(self):
        """Test all-zero posteriors score 0."""
        dataset = single_event_dataset()

        evaluation = evaluate_predictions(np.zeros((1, 40, 1)), dataset, TINY_TRAIN)

        assert evaluation.eb_f1 == 0.0
        assert evaluation.eb_counts[0].fn == 1

    def test_write_evaluation(self, tmp_path):
        """Test metrics.csv carries the score columns and the manifest validates."""
        dataset = single_event_dataset()
        evaluation = evaluate_predictions(dataset.labels.astype(float), dataset, TINY_TRAIN)

        write_evaluation(tmp_path, evaluation, dataset.class_names)

        with open(tmp_path / "metrics.csv", newline="") as f:
            row = next(csv.DictReader(f))
        assert float(row["eb_f1"]) == pytest.approx(1.0)
        assert set(row) == {"eb_precision", "eb_recall", "eb_f1", "ib_f1", "frame_f1"}
        assert (tmp_path / "class_counts.csv").read_text().splitlines()[1].startswith("dog,1,0,0")
        assert validate_package(tmp_path) == []


class TestTrainLoop:
    """Tests for train_loop on the tiny benchmark."""

    def test_outputs(self, tmp_path, tiny_dataset, tiny_val_dataset):
        """Test history, checkpoint, metrics report and log are produced."""
        seen = []
        state = init_model(TINY_MODEL)

        result = train_loop(
            state, tiny_dataset, tiny_val_dataset, TINY_TRAIN, tmp_path, on_epoch=seen.append
        )

        assert [r.epoch for r in result.history] == [0, 1]
        assert seen == result.history
        assert all(np.isfinite(r.loss) for r in result.history)
        assert result.history[0].temperature == TINY_TRAIN.temperature_start
        assert result.checkpoint == tmp_path / "model.ffdc"
        assert load_checkpoint(result.checkpoint, expected=TINY_MODEL).temperature == pytest.approx(
            result.history[-1].temperature
        )
        log = (tmp_path / "train_log.jsonl").read_text().splitlines()
        assert [json.loads(line)["epoch"] for line in log] == [0, 1]
        header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,loss,eb_f1,ib_f1"

    def test_parameters_change(self, tiny_dataset, tiny_val_dataset):
        """Test training updates the weights."""
        state = init_model(TINY_MODEL)
        before = state.blocks[1].spatial.weight.value.copy()

        train_loop(state, tiny_dataset, tiny_val_dataset, TINY_TRAIN)

        assert not np.array_equal(before, state.blocks[1].spatial.weight.value)

    def test_deterministic(self, tiny_dataset, tiny_val_dataset):
        """Test the same seed and data give identical histories."""
        first = train_loop(init_model(TINY_MODEL), tiny_dataset, tiny_val_dataset, TINY_TRAIN)
        second = train_loop(init_model(TINY_MODEL), tiny_dataset, tiny_val_dataset, TINY_TRAIN)

        assert [r.loss for r in first.history] == [r.loss for r in second.history]

    def test_non_finite_input_is_reported(self, tiny_dataset, tiny_val_dataset):
        """Test a NaN in the features stops training with a numeric error."""
        tiny_dataset.features[0, 0, 0] = np.nan

        with pytest.raises(NumericError, match="diverged at epoch 0"):
            train_loop(init_model(TINY_MODEL), tiny_dataset, tiny_val_dataset, TINY_TRAIN)

    @pytest.mark.slow
    def test_frequency_dynamic_keeps_up_with_static(self):
        """Test ffd blocks score at least as well as static ones on band-separated classes."""
        train_set = synth_dataset(TINY_SYNTH, 32, seed=5)
        val_set = synth_dataset(TINY_SYNTH, 16, seed=5, offset=32)
        config = replace(
            TINY_TRAIN, epochs=8, batch_size=4, warmup_epochs=2, temperature_epochs=8,
            n_train=32, n_val=16,
        )
        model = replace(TINY_MODEL, channels=(8, 8))

        scores = {
            kind: np.mean(
                [
                    train_loop(
                        init_model(model.with_variant(kind), seed), train_set, val_set, config
                    ).history[-1].eb_f1
                    for seed in (0, 1)
                ]
            )
            for kind in ("static", "ffd")
        }

        assert scores["ffd"] >= scores["static"] - 0.05
