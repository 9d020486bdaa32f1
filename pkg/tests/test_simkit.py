import json

import numpy as np
import pytest

from app.errors import ConfigurationError
from app.services.ingest import ingest_csv
from app.services.model_core import ModelSpec, SegmentView, posterior_coefficients
from app.services.run_config import RunConfig
from app.services.simkit import (
    SCENARIO_PRESETS,
    ScenarioSpec,
    generate,
    preset,
    preset_catalogue,
    preset_models,
    scenario_from_payload,
    write_scenario,
)
from tests.factories import make_coef_prior


def custom_spec(**overrides):
    data = {
        "scenario_id": "Custom",
        "n": 100,
        "changepoints": [40],
        "models": [1, 2],
        "model_kinds": ["Mean", "ExpDecay"],
        "coefficients": [[1.0], [0.5, 2.0]],
        "thetas": [None, -2.0],
        "noise_sd": 0.0,
    }
    data.update(overrides)
    return ScenarioSpec.from_dict(data)


class TestGenerate:
    """Test synthetic scenario generation."""

    def test_s1_truth(self):
        """Test S1 changepoints and model track."""
        series, truth = generate(preset("S1"))
        assert len(series) == 1000
        assert truth.changepoints == [205, 489, 782]
        assert set(truth.model_track[:205]) == {2}
        assert set(truth.model_track[205:489]) == {1}
        assert np.isnan(truth.theta_track[0])
        assert truth.theta_track[300] == -3.0

    def test_noise_free_signal(self):
        """Test zero noise returns the exact piecewise signal."""
        series, truth = generate(custom_spec())
        np.testing.assert_array_equal(series.values[:40], np.ones(40))
        times = np.arange(1, 61)
        np.testing.assert_allclose(series.values[40:], 0.5 + 2.0 * np.exp(-np.exp(-2.0) * times))
        np.testing.assert_array_equal(series.values, truth.signal)

    def test_refit_recovers_coefficients(self, exp_model):
        """Test a noise-free segment refit at the true theta returns its coefficients."""
        series, _ = generate(custom_spec())
        model = ModelSpec("ExpDecay", 1.0, make_coef_prior(2, scale=1e4), exp_model.theta_prior)
        coefficients = posterior_coefficients(SegmentView(series.values[40:]), model, -2.0)
        np.testing.assert_allclose(coefficients, [0.5, 2.0], atol=1e-3)

    def test_deterministic(self):
        """Test equal seeds give equal series and different seeds differ."""
        first, _ = generate(preset("S4", seed=3))
        second, _ = generate(preset("S4", seed=3))
        other, _ = generate(preset("S4", seed=4))
        np.testing.assert_array_equal(first.values, second.values)
        assert not np.array_equal(first.values, other.values)

    def test_sampling_interval(self):
        """Test timestamps follow the sampling interval."""
        series, _ = generate(custom_spec(sampling_interval_hours=6.0))
        assert series.sampling_interval_hours == 6.0
        assert (series.timestamps[1] - series.timestamps[0]).total_seconds() == 6 * 3600


class TestScenarioSpec:
    """Test scenario validation."""

    @pytest.mark.parametrize("overrides", [
        {"changepoints": [0]},
        {"changepoints": [100]},
        {"changepoints": [60, 40], "models": [1, 2, 1], "coefficients": [[1.0], [0.5, 2.0], [1.0]],
         "thetas": [None, -2.0, None]},
        {"models": [1, 3]},
        {"coefficients": [[1.0, 2.0], [0.5, 2.0]]},
        {"thetas": [None, None]},
        {"thetas": [0.5, -2.0]},
        {"scenario_id": "S9"},
        {"noise_sd": -0.1},
        {"model_kinds": ["Mean", "Spline"]},
    ])
    def test_rejects_invalid(self, overrides):
        """Test inconsistent specs are configuration errors."""
        with pytest.raises(ConfigurationError):
            custom_spec(**overrides)

    def test_unknown_and_missing_fields(self):
        """Test from_dict reports unknown and missing keys."""
        with pytest.raises(ConfigurationError) as excinfo:
            custom_spec(colour="red")
        assert excinfo.value.details["fields"] == ["colour"]
        with pytest.raises(ConfigurationError):
            ScenarioSpec.from_dict({"scenario_id": "Custom", "n": 10})

    def test_periodic_needs_positive_cycle(self):
        """Test a nonpositive cycle length is refused."""
        with pytest.raises(ConfigurationError):
            custom_spec(model_kinds=["Mean", "Periodic"], thetas=[None, -4.0])


class TestPresets:
    """Test scenario presets and their model lists."""

    def test_payload_preset(self):
        """Test a preset reference with overrides."""
        spec = scenario_from_payload({"scenario": "S4", "seed": 3, "noise_sd": 0.2})
        assert spec.scenario_id == "S4"
        assert spec.seed == 3
        assert spec.noise_sd == 0.2
        assert spec.thetas == [None, 15.0, None, 18.0]

    def test_payload_rejects_extra_fields(self):
        """Test unknown preset keys are refused."""
        with pytest.raises(ConfigurationError):
            scenario_from_payload({"scenario": "S1", "colour": "red"})

    def test_unknown_preset(self):
        """Test only S1 to S4 have presets."""
        with pytest.raises(ConfigurationError):
            preset("Custom")

    def test_models_build_a_run(self):
        """Test every preset model list is a valid run configuration."""
        for scenario_id in SCENARIO_PRESETS:
            config = RunConfig.from_dict({"models": preset_models(scenario_id), "series": {"values": [0.0] * 20}})
            kinds = [spec.name for spec in config.model_specs]
            assert kinds == SCENARIO_PRESETS[scenario_id]["model_kinds"]
            assert config.needs_extension

    def test_catalogue(self):
        """Test the catalogue lists every preset with its spec."""
        catalogue = preset_catalogue()
        assert sorted(catalogue) == ["S1", "S2", "S3", "S4"]
        assert catalogue["S2"]["spec"]["changepoints"] == [252, 524, 766]


class TestWriteScenario:
    """Test scenario files on disk."""

    def test_files(self, tmp_path):
        """Test series, truth and scenario files are written and readable."""
        spec = preset("S2", seed=1)
        paths = write_scenario(spec, str(tmp_path))
        series, truth = generate(spec)
        ingested = ingest_csv(paths["series"])
        np.testing.assert_allclose(ingested.values, series.values, rtol=1e-9)
        assert ingested.sampling_interval_hours == 1.0
        with open(paths["truth"]) as f:
            truth_document = json.load(f)
        assert truth_document["changepoints"] == truth.changepoints
        assert truth_document["theta_track"][0] is None
        with open(paths["scenario"]) as f:
            assert ScenarioSpec.from_dict(json.load(f)).to_dict() == spec.to_dict()
