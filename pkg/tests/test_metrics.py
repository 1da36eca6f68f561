"""Tests for post-processing and event-level metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffdconv.exceptions import ConfigError, DataError
from ffdconv.metrics import (
    EventAnnotation,
    decode_events,
    eb_counts,
    eb_f1,
    frame_f1,
    ib_counts,
    ib_f1,
    median_filter,
    read_annotations,
    write_annotations,
)

event_lists = st.lists(
    st.builds(
        lambda label, onset, duration, clip: EventAnnotation(
            label, onset, onset + duration, f"clip_{clip}"
        ),
        st.integers(0, 2),
        st.floats(0.0, 9.0),
        st.floats(0.05, 3.0),
        st.integers(0, 1),
    ),
    min_size=1,
    max_size=8,
)


def _enumerated_median(probs: np.ndarray, length: int) -> np.ndarray:
    half = length // 2
    padded = np.pad(probs, half, mode="edge")
    return np.array([np.median(padded[t : t + length]) for t in range(len(probs))])


# =============================================================================
# Post-processing
# =============================================================================


class TestMedianFilter:
    """Tests for the per-class median filter."""

    def test_removes_isolated_spike(self):
        """Test [0,1,0,1,1,1,0] with length 3 gives [0,0,1,1,1,1,0]."""
        out = median_filter(np.array([0, 1, 0, 1, 1, 1, 0], dtype=float), 3)

        np.testing.assert_array_equal(out, [0, 0, 1, 1, 1, 1, 0])

    def test_classes_filtered_independently(self):
        """Test each column is filtered on its own."""
        probs = np.array([[0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])

        np.testing.assert_array_equal(median_filter(probs, 3), [[0, 1], [0, 1], [0, 0]])

    def test_length_one_is_identity(self):
        """Test a window of one leaves posteriors untouched."""
        probs = np.random.default_rng(0).uniform(size=(5, 2))

        np.testing.assert_array_equal(median_filter(probs, 1), probs)

    def test_even_length(self):
        """Test even window lengths are rejected."""
        with pytest.raises(ConfigError):
            median_filter(np.zeros(4), 2)

    def test_matches_window_enumeration(self):
        """Test 1000 seeded random binary sequences against a per-window median."""
        rng = np.random.default_rng(7)
        for _ in range(1000):
            probs = rng.integers(0, 2, size=int(rng.integers(1, 40))).astype(float)
            length = int(rng.choice([1, 3, 5, 7, 9]))

            np.testing.assert_array_equal(
                median_filter(probs, length), _enumerated_median(probs, length)
            )

    def test_alternating_needs_two_passes(self):
        """Test an alternating sequence only settles on the second length-3 pass."""
        once = median_filter(np.array([0, 1, 0, 1, 0, 1], dtype=float), 3)

        np.testing.assert_array_equal(once, [0, 0, 1, 0, 1, 1])
        np.testing.assert_array_equal(median_filter(once, 3), [0, 0, 0, 1, 1, 1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=60))
    def test_length_three_reaches_fixed_point(self, bits):
        """Test repeated length-3 passes settle on a sequence the filter leaves unchanged."""
        probs = np.array(bits, dtype=float)
        for _ in range(len(bits)):
            filtered = median_filter(probs, 3)
            if np.array_equal(filtered, probs):
                break
            probs = filtered

        np.testing.assert_array_equal(median_filter(probs, 3), probs)
        np.testing.assert_array_equal(median_filter(median_filter(probs, 3), 3), probs)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(2, 6)), min_size=1, max_size=10))
    def test_runs_of_two_or_more_are_fixed(self, runs):
        """Test binary sequences without isolated frames are left unchanged by length 3."""
        probs = np.concatenate([np.full(n, float(bit)) for bit, n in runs])

        np.testing.assert_array_equal(median_filter(probs, 3), probs)


class TestDecodeEvents:
    """Tests for thresholding and run merging."""

    def test_run_becomes_one_event(self):
        """Test frames 10..19 at hop 0.064 s decode to (0.64, 1.28)."""
        probs = np.zeros((40, 1))
        probs[10:20, 0] = 0.9

        events = decode_events(probs, 0.5, 0.064, "a")

        assert len(events) == 1
        assert events[0].onset == pytest.approx(0.64)
        assert events[0].offset == pytest.approx(1.28)
        assert events[0].filename == "a"

    def test_per_class_thresholds(self):
        """Test each class uses its own threshold."""
        probs = np.full((4, 2), 0.6)

        events = decode_events(probs, [0.5, 0.7], 1.0)

        assert [e.label for e in events] == [0]

    def test_run_touching_the_end(self):
        """Test a run reaching the last frame closes at the clip end."""
        events = decode_events(np.array([0.0, 0.0, 1.0, 1.0]), 0.5, 0.5)

        assert (events[0].onset, events[0].offset) == (1.0, 2.0)

    @given(st.lists(st.booleans(), min_size=1, max_size=50))
    def test_events_reproduce_active_frames(self, active):
        """Test decoded events cover exactly the active frames."""
        probs = np.array(active, dtype=float)
        covered = np.zeros(len(active), dtype=bool)
        for event in decode_events(probs, 0.5, 1.0):
            covered[int(round(event.onset)) : int(round(event.offset))] = True

        np.testing.assert_array_equal(covered, np.array(active))


# =============================================================================
# Event-based F1
# =============================================================================


class TestCollarF1:
    """Tests for collar-based matching."""

    def test_within_collar(self):
        """Test (1.0, 2.0) against (1.1, 2.1) is a perfect match."""
        pred = [EventAnnotation(0, 1.0, 2.0, "a")]
        gt = [EventAnnotation(0, 1.1, 2.1, "a")]

        assert eb_f1(pred, gt) == (1.0, 1.0, 1.0)

    def test_onset_outside_collar(self):
        """Test an onset 0.3 s off counts as one false positive and one miss."""
        counts = eb_counts([EventAnnotation(0, 1.3, 2.0, "a")], [EventAnnotation(0, 1.0, 2.0, "a")])

        assert (counts[0].tp, counts[0].fp, counts[0].fn) == (0, 1, 1)

    def test_offset_collar_scales_with_duration(self):
        """Test a long event tolerates an offset error up to 20% of its length."""
        pred = [EventAnnotation(0, 0.0, 4.7, "a")]
        gt = [EventAnnotation(0, 0.0, 4.0, "a")]

        assert eb_f1(pred, gt)[2] == 1.0

    def test_no_cross_class_matching(self):
        """Test events of different classes never match."""
        pred, gt = [EventAnnotation(0, 1.0, 2.0, "a")], [EventAnnotation(1, 1.0, 2.0, "a")]

        assert eb_f1(pred, gt)[2] == 0

    def test_no_cross_clip_matching(self):
        """Test events of different clips never match."""
        pred, gt = [EventAnnotation(0, 1.0, 2.0, "a")], [EventAnnotation(0, 1.0, 2.0, "b")]

        assert eb_f1(pred, gt)[2] == 0

    def test_one_to_one(self):
        """Test two predictions cannot both claim one ground truth."""
        pred = [EventAnnotation(0, 1.0, 2.0, "a"), EventAnnotation(0, 1.05, 2.05, "a")]
        counts = eb_counts(pred, [EventAnnotation(0, 1.0, 2.0, "a")])

        assert (counts[0].tp, counts[0].fp, counts[0].fn) == (1, 1, 0)

    def test_empty_is_zero(self):
        """Test F1 is 0 when it is undefined."""
        assert eb_f1([], []) == (0.0, 0.0, 0.0)

    def test_negative_collar(self):
        """Test a negative collar is rejected."""
        with pytest.raises(ConfigError):
            eb_f1([], [], collar=-0.1)

    @given(event_lists)
    def test_self_match_is_perfect(self, events):
        """Test any non-empty event list matches itself with F1 1."""
        assert eb_f1(events, events)[2] == 1.0


class TestIntersectionF1:
    """Tests for intersection-based matching."""

    def test_half_overlap_passes_both_criteria(self):
        """Test (0, 1) against (0.5, 1.5) at dtc = gtc = 0.5 is a hit."""
        counts = ib_counts([EventAnnotation(0, 0.0, 1.0, "a")], [EventAnnotation(0, 0.5, 1.5, "a")])

        assert (counts[0].passing, counts[0].detected) == (1, 1)
        assert ib_f1([EventAnnotation(0, 0.0, 1.0, "a")], [EventAnnotation(0, 0.5, 1.5, "a")]) == 1

    def test_fragmented_predictions_cover_ground_truth(self):
        """Test several passing predictions can jointly detect one ground truth."""
        pred = [EventAnnotation(0, 0.0, 1.0, "a"), EventAnnotation(0, 1.2, 2.0, "a")]
        counts = ib_counts(pred, [EventAnnotation(0, 0.0, 2.0, "a")])

        assert (counts[0].n_pred, counts[0].passing, counts[0].detected) == (2, 2, 1)

    def test_mostly_outside_prediction_fails(self):
        """Test a prediction mostly outside the ground truth does not pass."""
        counts = ib_counts([EventAnnotation(0, 0.0, 4.0, "a")], [EventAnnotation(0, 3.0, 5.0, "a")])

        assert counts[0].passing == 0
        assert counts[0].detected == 0

    def test_invalid_criteria(self):
        """Test dtc must lie in (0, 1]."""
        with pytest.raises(ConfigError):
            ib_f1([], [], dtc=0.0)

    @settings(max_examples=50)
    @given(event_lists)
    def test_self_match_is_perfect(self, events):
        """Test any non-empty event list matches itself with F1 1."""
        assert ib_f1(events, events) == 1.0


class TestFrameF1:
    """Tests for frame-level F1."""

    def test_perfect(self):
        """Test identical activity gives 1."""
        labels = np.array([[1.0, 0.0], [0.0, 1.0]])

        assert frame_f1(labels > 0.5, labels) == 1.0

    def test_half(self):
        """Test one hit, one false alarm and one miss give F1 0.5."""
        active = np.array([[True, True], [False, False]])
        labels = np.array([[1.0, 0.0], [1.0, 0.0]])

        assert frame_f1(active, labels) == pytest.approx(0.5)


# =============================================================================
# Annotation files
# =============================================================================


class TestAnnotationFiles:
    """Tests for strong-label TSV files."""

    def test_read_back(self, tmp_path):
        """Test written annotations read back with their class names resolved."""
        events = [EventAnnotation(1, 0.5, 1.25, "clip_00000")]
        path = tmp_path / "annotations.tsv"
        write_annotations(path, events, ["dog", "siren"])

        assert read_annotations(path, ["dog", "siren"]) == events
        assert path.read_text().splitlines()[1] == "clip_00000\t0.500000\t1.250000\tsiren"

    def test_unknown_label(self, tmp_path):
        """Test labels missing from the class list are reported with their line."""
        path = tmp_path / "annotations.tsv"
        path.write_text("filename\tonset\toffset\tevent_label\nc\t0.0\t1.0\tcat\n")

        with pytest.raises(DataError, match=":2: unknown event label 'cat'"):
            read_annotations(path, ["dog"])

    def test_bad_header(self, tmp_path):
        """Test a file with the wrong header is refused."""
        path = tmp_path / "annotations.tsv"
        path.write_text("a\tb\n")

        with pytest.raises(DataError):
            read_annotations(path, ["dog"])

    def test_inverted_interval(self):
        """Test an offset before the onset is rejected."""
        with pytest.raises(DataError):
            EventAnnotation(0, 2.0, 1.0)
