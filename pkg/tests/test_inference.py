import numpy as np
import pytest

from app.errors import ConfigurationError, HistoryIntegrityError
from app.services.engine import EngineSettings, RunLength, run_filter
from app.services.inference import (
    SegmentSummary,
    backward_simulate,
    evaluate_detection,
    viterbi_map,
)
from app.services.model_core import ModelSpec, ThetaPrior
from app.services.particle_filter import ParticleFilterExtension
from tests import brute_force
from tests.factories import make_coef_prior


def two_level_series(seed=5, n=12):
    rng = np.random.default_rng(seed)
    values = np.concatenate([np.full(n // 2, 0.0), np.linspace(1.0, 2.0, n - n // 2)])
    return values + 0.25 * rng.normal(size=n)


@pytest.fixture
def exact_history(closed_form_models):
    rl = RunLength(hazard=0.2, min_length=2)
    return run_filter(two_level_series(), closed_form_models, rl, settings=EngineSettings(resampling=False))


class TestViterbi:
    """Test MAP decoding from the recorded pointers."""

    def test_matches_enumeration(self, exact_history, closed_form_models):
        """Test the MAP score and changepoints against exhaustive search."""
        result = viterbi_map(exact_history)
        score, changepoints = brute_force.map_segmentation(exact_history.values, closed_form_models,
                                                           exact_history.run_length)
        assert result.log_score == pytest.approx(score, abs=1e-8)
        assert result.changepoints == changepoints

    def test_matches_enumeration_across_datasets(self, closed_form_models):
        """Test MAP agreement with exhaustive search on many random series."""
        rl = RunLength(hazard=0.2, min_length=2)
        for seed in range(50):
            values = two_level_series(seed=100 + seed)
            history = run_filter(values, closed_form_models, rl, settings=EngineSettings(resampling=False))
            _, changepoints = brute_force.map_segmentation(values, closed_form_models, rl)
            assert viterbi_map(history).changepoints == changepoints, f"seed {100 + seed}"

    def test_factors_add_up(self, exact_history):
        """Test per-segment log factors sum to the MAP score."""
        result = viterbi_map(exact_history)
        assert sum(segment.log_factor for segment in result.segments) == pytest.approx(result.log_score)

    def test_segments_tile_the_series(self, exact_history):
        """Test segments are contiguous, at least d long, and cover 0..n."""
        result = viterbi_map(exact_history)
        assert result.segments[0].start == 0
        assert result.segments[-1].end == result.n
        for left, right in zip(result.segments, result.segments[1:]):
            assert left.end == right.start
        assert all(segment.length >= result.min_length for segment in result.segments)
        assert result.fitted_values().size == result.n
        assert set(result.model_track()) <= {1, 2}

    def test_finds_level_shift(self, closed_form_models, step_series):
        """Test a single clear jump is found where it happened."""
        history = run_filter(step_series, closed_form_models, RunLength(hazard=0.01, min_length=5))
        result = viterbi_map(history)
        assert result.changepoints == [30]
        assert [segment.kind for segment in result.segments] == ["Mean", "Mean"]
        assert result.segments[1].coefficients[0] == pytest.approx(4.0, abs=0.1)

    def test_missing_final_record(self, exact_history):
        """Test decoding a truncated history is an integrity error."""
        del exact_history.map_records[exact_history.n]
        with pytest.raises(HistoryIntegrityError):
            viterbi_map(exact_history)

    def test_theta_segment_summary(self, rng):
        """Test decoded ExpDecay segments carry the extension summary."""
        models = [
            ModelSpec('Mean', 0.5, make_coef_prior(1)),
            ModelSpec('ExpDecay', 0.5, make_coef_prior(2), ThetaPrior(-2.0, 0.7, -6.0, 1.0)),
        ]
        decay = 1.0 + 2.0 * np.exp(-np.exp(-1.5) * np.arange(1, 31))
        values = np.concatenate([np.full(20, 1.0), decay]) + 0.05 * rng.normal(size=50)
        history = run_filter(values, models, RunLength(hazard=0.02, min_length=5),
                             ParticleFilterExtension(n_particles=200), EngineSettings(seed=3))
        last = viterbi_map(history).segments[-1]
        assert last.kind == "ExpDecay"
        assert last.theta["method"] == "pf"
        assert models[1].theta_prior.lower <= last.theta_estimate <= models[1].theta_prior.upper


class TestBackwardSimulation:
    """Test sampling configurations from the filtering history."""

    def test_respects_min_length(self, exact_history):
        """Test every sampled segment is at least d long."""
        sample = backward_simulate(exact_history, n_draws=300, rng=np.random.default_rng(1))
        d, n = exact_history.run_length.min_length, exact_history.n
        assert sample.n_draws == 300
        for configuration in sample.configurations:
            bounds = (0,) + configuration + (n,)
            assert all(b - a >= d for a, b in zip(bounds, bounds[1:]))

    def test_inclusion_matches_enumeration(self, exact_history, closed_form_models):
        """Test sampled changepoint frequencies against the exact posterior."""
        sample = backward_simulate(exact_history, n_draws=4000, rng=np.random.default_rng(2))
        expected = brute_force.inclusion(exact_history.values, closed_form_models, exact_history.run_length)
        assert sample.inclusion.size == exact_history.n + 1
        np.testing.assert_allclose(sample.inclusion, expected, atol=0.05)

    def test_missing_step(self, exact_history):
        """Test a history without its final step is an integrity error."""
        del exact_history.steps[exact_history.n]
        with pytest.raises(HistoryIntegrityError):
            backward_simulate(exact_history, n_draws=1)


class TestDetection:
    """Test changepoint matching and detection metrics."""

    def test_rates(self):
        """Test detections within the window count once each."""
        metrics = evaluate_detection([98, 205, 400], [100, 200, 300], tolerance=10)
        assert metrics.matches == [(98, 100), (205, 200)]
        assert metrics.true_positive_rate == pytest.approx(2 / 3)
        assert metrics.precision == pytest.approx(2 / 3)
        assert metrics.model_selection_accuracy is None

    def test_window_is_strict(self):
        """Test a detection exactly tolerance away does not match."""
        metrics = evaluate_detection([110], [100], tolerance=10)
        assert metrics.matches == []
        assert metrics.true_positive_rate == 0.0

    def test_one_to_one(self):
        """Test two detections cannot share one true changepoint."""
        metrics = evaluate_detection([99, 101], [100], tolerance=10)
        assert metrics.matches == [(99, 100)]
        assert metrics.precision == pytest.approx(0.5)
        assert metrics.true_positive_rate == 1.0

    def test_empty_sets(self):
        """Test nothing detected against nothing true is perfect."""
        metrics = evaluate_detection([], [])
        assert metrics.true_positive_rate == 1.0
        assert metrics.precision == 1.0

    def test_model_selection_accuracy(self):
        """Test the share of time steps with the right model."""
        metrics = evaluate_detection([2], [1], 10, [1, 1, 2, 2], [1, 2, 2, 2])
        assert metrics.model_selection_accuracy == pytest.approx(0.75)
        assert metrics.to_dict()["matches"] == [[2, 1]]

    def test_needs_both_tracks(self):
        """Test a single model track is a configuration error."""
        with pytest.raises(ConfigurationError):
            evaluate_detection([2], [1], 10, [1, 1, 2, 2])


class TestSegmentSummary:
    """Test the serialised segment."""

    def test_drydown_for_exp_decay(self):
        """Test ExpDecay segments report decay rate and e-folding time."""
        segment = SegmentSummary(0, 10, 2, "ExpDecay", [1.0, 2.0], -3.0, {"method": "og", "estimate": 0.0})
        drydown = segment.to_dict(24.0)["drydown"]
        assert drydown["decay_rate"] == pytest.approx(np.exp(-1.0))
        assert drydown["efold_samples"] == pytest.approx(1.0)
        assert drydown["efold_days"] == pytest.approx(1.0)

    def test_no_drydown_for_mean(self):
        """Test segments without decay carry no drydown block."""
        segment = SegmentSummary(0, 10, 1, "Mean", [1.0], -3.0)
        assert "drydown" not in segment.to_dict(24.0)
