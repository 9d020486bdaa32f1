"""
Run configuration: the JSON document that drives one segmentation run.
"""
import copy
import json
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Optional

from app.errors import ConfigurationError
from app.services.engine import EngineSettings, RunLength
from app.services.model_core import ConjugatePrior, ModelSpec, ThetaPrior
from app.services.numeric_reference import NumericReferenceExtension
from app.services.online_gradient import ORDERS, OnlineGradientExtension
from app.services.particle_filter import RESAMPLING_SCHEMES, WEIGHTING_SCHEMES, ParticleFilterExtension

EXTENSIONS = ("pf", "og", "numeric-reference")
R_EPS_GRID = [1e-6, 5e-6, 1e-7]


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass
class RunConfig:
    models: list
    input_path: Optional[str] = None
    series: Optional[dict] = None
    extension: str = "pf"
    hazard: float = 0.005
    min_length: int = 10
    n_particles: int = 1000
    shrinkage: float = 0.98
    pf_resampling: str = "multinomial"
    pf_weighting: str = "segment_ratio"
    r_eps: object = 1e-6
    og_order: str = "second"
    curvature_floor: float = 1e-4
    resample_high: int = 80
    resample_to: int = 40
    protect_steps: Optional[int] = None
    down_sample: int = 1
    longest_block: bool = True
    seed: int = 0
    output_dir: Optional[str] = None
    backward_draws: int = 500
    subdivision_cap: int = 1000
    sampling_interval_hours: Optional[float] = None
    workers: int = 1
    label: Optional[str] = None
    _model_specs: list = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("Run configuration must be a JSON object")
        known = {f.name for f in fields(cls) if f.init}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError("Unknown run configuration fields", fields=unknown)
        if "models" not in data:
            raise ConfigurationError("Run configuration needs a 'models' list")
        return cls(**data)

    @property
    def r_eps_values(self):
        if self.r_eps == "sweep":
            return list(R_EPS_GRID)
        return list(self.r_eps) if isinstance(self.r_eps, (list, tuple)) else [self.r_eps]

    @property
    def is_sweep(self):
        return self.extension == "og" and len(self.r_eps_values) > 1

    def validate(self):
        for name in ("hazard", "shrinkage", "curvature_floor"):
            if not _is_number(getattr(self, name)):
                raise ConfigurationError(f"'{name}' must be a number", **{name: getattr(self, name)})
        if self.sampling_interval_hours is not None and not _is_number(self.sampling_interval_hours):
            raise ConfigurationError("'sampling_interval_hours' must be a number",
                                     sampling_interval_hours=self.sampling_interval_hours)
        for name in ("extension", "pf_resampling", "pf_weighting", "og_order"):
            if not isinstance(getattr(self, name), str):
                raise ConfigurationError(f"'{name}' must be a string", **{name: getattr(self, name)})
        for name in ("input_path", "output_dir", "label"):
            if getattr(self, name) is not None and not isinstance(getattr(self, name), str):
                raise ConfigurationError(f"'{name}' must be a string", **{name: getattr(self, name)})
        if not isinstance(self.longest_block, bool):
            raise ConfigurationError("'longest_block' must be true or false", longest_block=self.longest_block)
        if (self.input_path is None) == (self.series is None):
            raise ConfigurationError("Give exactly one of 'input_path' or 'series'")
        if self.extension not in EXTENSIONS:
            raise ConfigurationError(f"Unknown extension '{self.extension}'", allowed=list(EXTENSIONS))
        if not 0.0 < self.hazard <= 1.0:
            raise ConfigurationError("Hazard must lie in (0, 1]", hazard=self.hazard)
        for name in ("min_length", "n_particles", "resample_high", "resample_to", "down_sample",
                     "backward_draws", "subdivision_cap", "workers", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"'{name}' must be an integer", **{name: value})
        for name in ("min_length", "n_particles", "resample_to", "down_sample", "subdivision_cap", "workers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"'{name}' must be at least 1", **{name: getattr(self, name)})
        if self.seed < 0:
            raise ConfigurationError("'seed' must be nonnegative", seed=self.seed)
        if self.backward_draws < 0:
            raise ConfigurationError("'backward_draws' must be nonnegative", backward_draws=self.backward_draws)
        if self.resample_high < self.resample_to:
            raise ConfigurationError("Resampling needs resample_to <= resample_high",
                                     resample_high=self.resample_high, resample_to=self.resample_to)
        if self.protect_steps is not None and (isinstance(self.protect_steps, bool)
                                               or not isinstance(self.protect_steps, int) or self.protect_steps < 0):
            raise ConfigurationError("'protect_steps' must be a nonnegative integer", protect_steps=self.protect_steps)
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigurationError("Shrinkage must lie in (0, 1]", shrinkage=self.shrinkage)
        if self.pf_resampling not in RESAMPLING_SCHEMES:
            raise ConfigurationError(f"Unknown resampling scheme '{self.pf_resampling}'",
                                     allowed=list(RESAMPLING_SCHEMES))
        if self.pf_weighting not in WEIGHTING_SCHEMES:
            raise ConfigurationError(f"Unknown weighting scheme '{self.pf_weighting}'",
                                     allowed=list(WEIGHTING_SCHEMES))
        if self.og_order not in ORDERS:
            raise ConfigurationError(f"Unknown update order '{self.og_order}'", allowed=list(ORDERS))
        if not self.r_eps_values or any(not _is_number(r) or not r > 0 for r in self.r_eps_values):
            raise ConfigurationError("r_eps must be positive", r_eps=self.r_eps)
        if not self.curvature_floor > 0:
            raise ConfigurationError("Curvature floor must be positive", curvature_floor=self.curvature_floor)
        if self.sampling_interval_hours is not None and not self.sampling_interval_hours > 0:
            raise ConfigurationError("Sampling interval must be positive",
                                     sampling_interval_hours=self.sampling_interval_hours)
        self._model_specs = self.build_models()

    def build_models(self):
        """ModelSpec list; missing prior probabilities are shared equally."""
        if not isinstance(self.models, list) or not self.models:
            raise ConfigurationError("At least one candidate model is required")
        given = [entry.get("prior_prob") for entry in self.models if isinstance(entry, dict)]
        if len(given) != len(self.models):
            raise ConfigurationError("Each model entry must be a JSON object")
        if all(p is None for p in given):
            probs = [1.0 / len(self.models)] * len(self.models)
        elif any(p is None for p in given):
            raise ConfigurationError("Give 'prior_prob' for every model or for none")
        else:
            probs = [float(p) for p in given]
            if abs(sum(probs) - 1.0) > 1e-9:
                raise ConfigurationError("Model prior probabilities must sum to 1", total=sum(probs))

        specs = []
        for entry, prob in zip(self.models, probs):
            unknown = sorted(set(entry) - {"kind", "prior_prob", "coef_prior", "theta_prior"})
            if unknown:
                raise ConfigurationError("Unknown model fields", fields=unknown)
            if "kind" not in entry or "coef_prior" not in entry:
                raise ConfigurationError("Model entries need 'kind' and 'coef_prior'")
            try:
                coef_prior = ConjugatePrior.from_dict(entry["coef_prior"])
                theta_prior = ThetaPrior.from_dict(entry["theta_prior"]) if entry.get("theta_prior") else None
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigurationError(f"Malformed prior for model '{entry.get('kind')}': {e}")
            specs.append(ModelSpec(entry["kind"], prob, coef_prior, theta_prior))
        return specs

    @property
    def model_specs(self):
        return self._model_specs

    @property
    def needs_extension(self):
        return any(spec.has_theta for spec in self._model_specs)

    def build_run_length(self):
        return RunLength(hazard=self.hazard, min_length=self.min_length)

    def build_settings(self):
        return EngineSettings(
            resample_high=self.resample_high,
            resample_to=self.resample_to,
            protect_steps=self.protect_steps,
            seed=self.seed,
            workers=self.workers,
        )

    def build_extension(self, r_eps=None):
        if not self.needs_extension:
            return None
        if self.extension == "pf":
            return ParticleFilterExtension(self.n_particles, self.shrinkage, self.pf_resampling, self.pf_weighting)
        if self.extension == "og":
            r_eps = self.r_eps_values[0] if r_eps is None else r_eps
            return OnlineGradientExtension(r_eps, self.og_order, self.curvature_floor)
        return NumericReferenceExtension(self.subdivision_cap)

    def to_dict(self):
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self) if f.init}


def load_run_config(path):
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"Could not read run configuration {path}: {e}", path=str(path))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Run configuration {path} is not valid JSON: {e}", path=str(path))
    if isinstance(data, dict) and data.get("input_path") and not os.path.isabs(data["input_path"]):
        data["input_path"] = os.path.join(os.path.dirname(os.path.abspath(path)), data["input_path"])
    config = RunConfig.from_dict(data)
    logging.info(f"Loaded run configuration from {path}: extension={config.extension}, "
                 f"{len(config.models)} models")
    return config
