"""
Seedable synthetic scenarios with ground truth.

Each segment is generated on segment-relative times 1..length from its own
start, with the same bases the segment models use. Noise is i.i.d. Gaussian.

Preset coefficients, noise level and priors are local choices. The
changepoint layouts, model orders and S4 cycle lengths define the scenarios.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from app.errors import ConfigurationError
from app.services.ingest import DEFAULT_START, TimeSeries
from app.services.model_core import ModelKind, basis_matrix

SCENARIO_IDS = ("S1", "S2", "S3", "S4", "Custom")
PRESET_VERSION = "2024.1"
DEFAULT_NOISE_SD = 0.1
DEFAULT_LENGTH = 1000

COEF_PRIOR = {"mean": [0.0, 0.0], "scale": [[1e4, 0.0], [0.0, 1e4]], "shape": 2.0, "rate": 0.01}
MEAN_COEF_PRIOR = {"mean": [0.0], "scale": [[1e4]], "shape": 2.0, "rate": 0.01}
THETA_PRIORS = {
    ModelKind.EXP_DECAY: {"mean": -3.2, "sd": 0.7, "lower": -8.0, "upper": 1.0},
    ModelKind.PERIODIC: {"mean": 14.0, "sd": 4.0, "lower": 3.0, "upper": 30.0},
}

SCENARIO_PRESETS = {
    "S1": {
        "changepoints": [205, 489, 782],
        "model_kinds": ["ExpDecay", "Mean"],
        "models": [2, 1, 1, 1],
        "coefficients": [[2.0], [1.0, 2.5], [0.8, 3.0], [1.2, 2.0]],
        "thetas": [None, -3.0, -3.5, -2.5],
    },
    "S2": {
        "changepoints": [252, 524, 766],
        "model_kinds": ["ExpDecay", "LinearTrend"],
        "models": [2, 1, 2, 1],
        "coefficients": [[2.0, 0.004], [1.0, 2.5], [3.0, -0.005], [0.8, 3.0]],
        "thetas": [None, -3.0, None, -3.5],
    },
    "S3": {
        "changepoints": [259, 534, 726],
        "model_kinds": ["Periodic", "Mean"],
        "models": [2, 1, 2, 1],
        "coefficients": [[2.0], [1.0, 1.0], [3.0], [2.0, 1.0]],
        "thetas": [None, 10.0, None, 16.0],
    },
    "S4": {
        "changepoints": [221, 528, 765],
        "model_kinds": ["Periodic", "LinearTrend"],
        "models": [2, 1, 2, 1],
        "coefficients": [[2.0, 0.004], [1.0, 1.0], [3.0, -0.005], [2.0, 1.0]],
        "thetas": [None, 15.0, None, 18.0],
    },
}


@dataclass
class ScenarioSpec:
    """A piecewise series: one generator (model index, coefficients, theta) per segment."""

    scenario_id: str
    n: int
    changepoints: list
    models: list
    model_kinds: list
    coefficients: list
    thetas: list
    noise_sd: float = DEFAULT_NOISE_SD
    seed: int = 0
    sampling_interval_hours: float = 1.0
    start_time: str = DEFAULT_START

    def __post_init__(self):
        self.validate()

    @property
    def n_segments(self):
        return len(self.changepoints) + 1

    @property
    def boundaries(self):
        return [0, *self.changepoints, self.n]

    def kind_of_segment(self, index):
        return ModelKind(self.model_kinds[self.models[index] - 1])

    def validate(self):
        if self.scenario_id not in SCENARIO_IDS:
            raise ConfigurationError(f"Unknown scenario '{self.scenario_id}'", allowed=list(SCENARIO_IDS))
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError("Scenario length must be a positive integer", n=self.n)
        cps = list(self.changepoints)
        if any(int(c) != c for c in cps) or any(not 0 < c < self.n for c in cps):
            raise ConfigurationError("Changepoints must be integers inside (0, n)", changepoints=cps, n=self.n)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigurationError("Changepoints must be strictly increasing", changepoints=cps)
        segments = len(cps) + 1
        for name in ("models", "coefficients", "thetas"):
            if len(getattr(self, name)) != segments:
                raise ConfigurationError(f"Scenario needs one '{name}' entry per segment",
                                         segments=segments, given=len(getattr(self, name)))
        try:
            kinds = [ModelKind(kind) for kind in self.model_kinds]
        except ValueError as e:
            raise ConfigurationError(f"Unknown model kind: {e}")
        if not self.noise_sd >= 0:
            raise ConfigurationError("Noise standard deviation must be nonnegative", noise_sd=self.noise_sd)
        if not self.sampling_interval_hours > 0:
            raise ConfigurationError("Sampling interval must be positive",
                                     sampling_interval_hours=self.sampling_interval_hours)

        for index, (model, coefficients, theta) in enumerate(zip(self.models, self.coefficients, self.thetas)):
            if int(model) != model or not 1 <= model <= len(kinds):
                raise ConfigurationError("Model indices are 1-based positions in model_kinds",
                                         segment=index, model=model)
            kind = kinds[model - 1]
            if len(coefficients) != kind.n_coefficients:
                raise ConfigurationError(f"{kind.value} segments need {kind.n_coefficients} coefficients",
                                         segment=index, coefficients=coefficients)
            if kind.has_theta != (theta is not None):
                raise ConfigurationError("Theta must be given exactly for segments with a theta parameter",
                                         segment=index, kind=kind.value, theta=theta)
            if kind is ModelKind.PERIODIC and not theta > 0:
                raise ConfigurationError("Periodic cycle length must be positive", segment=index, theta=theta)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("Scenario spec must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError("Unknown scenario fields", fields=unknown)
        missing = sorted(name for name in ("scenario_id", "n", "changepoints", "models", "model_kinds",
                                           "coefficients", "thetas") if name not in data)
        if missing:
            raise ConfigurationError("Scenario spec is missing fields", fields=missing)
        return cls(**data)

    def to_dict(self):
        return {
            "scenario_id": self.scenario_id,
            "n": self.n,
            "changepoints": list(self.changepoints),
            "models": list(self.models),
            "model_kinds": list(self.model_kinds),
            "coefficients": [list(c) for c in self.coefficients],
            "thetas": list(self.thetas),
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "sampling_interval_hours": self.sampling_interval_hours,
            "start_time": self.start_time,
        }


@dataclass
class Truth:
    changepoints: list
    model_track: np.ndarray
    theta_track: np.ndarray
    signal: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        return {
            "changepoints": list(self.changepoints),
            "model_track": self.model_track.tolist(),
            "theta_track": [None if np.isnan(v) else float(v) for v in self.theta_track],
        }


def segment_signal(kind, length, coefficients, theta=None):
    """Deterministic part of one segment on times 1..length."""
    return basis_matrix(kind, length, theta) @ np.asarray(coefficients, dtype=float)


def generate(spec):
    """Draw one series and its truth tracks; identical specs give identical output."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    signal = np.empty(spec.n)
    model_track = np.empty(spec.n, dtype=int)
    theta_track = np.full(spec.n, np.nan)
    bounds = spec.boundaries
    for index in range(spec.n_segments):
        start, end = bounds[index], bounds[index + 1]
        theta = spec.thetas[index]
        signal[start:end] = segment_signal(spec.kind_of_segment(index), end - start, spec.coefficients[index], theta)
        model_track[start:end] = spec.models[index]
        if theta is not None:
            theta_track[start:end] = theta
    values = signal + rng.normal(0.0, spec.noise_sd, spec.n) if spec.noise_sd > 0 else signal.copy()

    series = TimeSeries.regular(values, spec.sampling_interval_hours, spec.start_time, source=spec.scenario_id)
    logging.info(f"Generated scenario {spec.scenario_id} (n={spec.n}, seed={spec.seed}, "
                 f"changepoints={list(spec.changepoints)})")
    return series, Truth(list(spec.changepoints), model_track, theta_track, signal)


def preset(scenario_id, seed=0, noise_sd=DEFAULT_NOISE_SD, n=DEFAULT_LENGTH):
    if scenario_id not in SCENARIO_PRESETS:
        raise ConfigurationError(f"No preset for scenario '{scenario_id}'", allowed=sorted(SCENARIO_PRESETS))
    layout = SCENARIO_PRESETS[scenario_id]
    return ScenarioSpec(
        scenario_id=scenario_id,
        n=n,
        changepoints=list(layout["changepoints"]),
        models=list(layout["models"]),
        model_kinds=list(layout["model_kinds"]),
        coefficients=[list(c) for c in layout["coefficients"]],
        thetas=list(layout["thetas"]),
        noise_sd=noise_sd,
        seed=seed,
    )


def model_config(kind, prior_prob):
    """Run-configuration entry for one candidate model with the preset priors."""
    kind = ModelKind(kind)
    entry = {
        "kind": kind.value,
        "prior_prob": prior_prob,
        "coef_prior": json.loads(json.dumps(MEAN_COEF_PRIOR if kind is ModelKind.MEAN else COEF_PRIOR)),
    }
    if kind.has_theta:
        entry["theta_prior"] = dict(THETA_PRIORS[kind])
    return entry


def preset_models(scenario_id):
    """Candidate model list matching a preset, with equal prior probabilities."""
    if scenario_id not in SCENARIO_PRESETS:
        raise ConfigurationError(f"No preset for scenario '{scenario_id}'", allowed=sorted(SCENARIO_PRESETS))
    kinds = SCENARIO_PRESETS[scenario_id]["model_kinds"]
    return [model_config(kind, 1.0 / len(kinds)) for kind in kinds]


def preset_catalogue():
    return {
        scenario_id: {
            "version": PRESET_VERSION,
            "spec": preset(scenario_id).to_dict(),
            "models": preset_models(scenario_id),
        }
        for scenario_id in SCENARIO_PRESETS
    }


def scenario_from_payload(payload):
    """Either a preset reference {"scenario": "S1", "seed": k, "noise_sd": sd} or a full spec."""
    if not isinstance(payload, dict):
        raise ConfigurationError("Scenario payload must be a JSON object")
    if "scenario" in payload:
        extra = sorted(set(payload) - {"scenario", "seed", "noise_sd", "n"})
        if extra:
            raise ConfigurationError("Unknown preset fields", fields=extra)
        return preset(
            payload["scenario"],
            seed=int(payload.get("seed", 0)),
            noise_sd=float(payload.get("noise_sd", DEFAULT_NOISE_SD)),
            n=int(payload.get("n", DEFAULT_LENGTH)),
        )
    return ScenarioSpec.from_dict(payload)


def write_scenario(spec, output_dir):
    """Write series.csv, truth.json and scenario.json; returns the written paths."""
    series, truth = generate(spec)
    os.makedirs(output_dir, exist_ok=True)
    paths = {
        "series": os.path.join(output_dir, "series.csv"),
        "truth": os.path.join(output_dir, "truth.json"),
        "scenario": os.path.join(output_dir, "scenario.json"),
    }
    series.to_frame().to_csv(paths["series"], index=False, float_format="%.10g")
    with open(paths["truth"], "w") as f:
        json.dump(truth.to_dict(), f, indent=2, sort_keys=True)
    with open(paths["scenario"], "w") as f:
        json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
    logging.info(f"Scenario {spec.scenario_id} written to {output_dir}")
    return paths
