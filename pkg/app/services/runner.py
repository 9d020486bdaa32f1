"""
End-to-end segmentation runs and their report bundles.

A bundle directory holds segments.json, filtering_mass.csv, inclusion.csv,
fitted.csv and manifest.json. Everything except the timing fields of the
manifest is a deterministic function of the configuration and its seed.
"""
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np
import pandas as pd
import scipy
from flask import current_app, has_app_context

from app.database import db
from app.errors import ConfigurationError, NonConvergenceError, SegmentationError
from app.helpers import write_json_file
from app.models import SegmentationRun
from app.services.engine import run_filter
from app.services.inference import backward_simulate, viterbi_map
from app.services.ingest import TimeSeries, ingest_csv
from app.services.model_core import ModelKind, drydown_transforms

ENGINE_VERSION = "1.0.0"
DEFAULT_OUTPUT_DIR = "./output"
BUNDLE_FILES = {
    "segments": "segments.json",
    "filtering_mass": "filtering_mass.csv",
    "inclusion": "inclusion.csv",
    "fitted": "fitted.csv",
    "manifest": "manifest.json",
}
FLOAT_FORMAT = "%.10g"

STATUS_COMPLETE = "COMPLETE"
STATUS_NA = "NA"
STATUS_FAILED = "FAILED"


@dataclass(eq=False)
class ReportBundle:
    output_dir: str
    status: str
    manifest: dict
    paths: dict = field(default_factory=dict)
    result: Optional[object] = None
    series: Optional[TimeSeries] = None

    @property
    def complete(self):
        return self.status == STATUS_COMPLETE

    def read_segments(self):
        with open(self.paths["segments"]) as f:
            return json.load(f)


def _utc_now():
    return datetime.now(timezone.utc).isoformat()


def _quartiles(values):
    q1, median, q3 = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75], method="linear")
    return {"q1": float(q1), "median": float(median), "q3": float(q3)}


def _inside(root, path, name):
    resolved = os.path.realpath(os.path.join(root, path))
    if os.path.commonpath([root, resolved]) != root:
        raise ConfigurationError(f"'{name}' must resolve inside the server's {name.split('_')[0]} directory",
                                 **{name: path})
    return resolved


def down_sample_series(series, k):
    if k == 1:
        return series
    return TimeSeries(series.values[::k], series.timestamps[::k], series.sampling_interval_hours * k,
                      series.source)


class SegmentationService:
    """Loads series, runs the filter and decoders, and writes report bundles."""

    def default_output_dir(self):
        configured = os.getenv("SEGMENTATION_OUTPUT_DIR")
        if configured:
            return configured
        if has_app_context():
            return current_app.config.get("SEGMENTATION_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)
        return DEFAULT_OUTPUT_DIR

    def default_workers(self):
        if has_app_context():
            return int(current_app.config.get("ENGINE_WORKERS", 1))
        return 1

    def bundle_dir(self, config):
        if config.output_dir:
            return config.output_dir
        name = config.label or f"run-{config.extension}-seed{config.seed}"
        return os.path.join(self.default_output_dir(), name)

    def confine(self, config, input_root=None):
        """Resolve the bundle directory and input file of a request under the server roots.

        Paths that resolve outside their root are refused; so is any input file when
        no input root is configured.
        """
        output_root = os.path.realpath(self.default_output_dir())
        target = config.output_dir or os.path.relpath(self.bundle_dir(config), self.default_output_dir())
        config.output_dir = _inside(output_root, target, "output_dir")
        if config.input_path is not None:
            if not input_root:
                raise ConfigurationError("Reading input files is disabled on this server", input_path=config.input_path)
            config.input_path = _inside(os.path.realpath(input_root), config.input_path, "input_path")
        return config

    def load_series(self, config):
        if config.input_path is not None:
            series = ingest_csv(config.input_path, config.down_sample, config.longest_block)
        else:
            series = down_sample_series(TimeSeries.from_dict(config.series), config.down_sample)
        if config.sampling_interval_hours is not None:
            series.sampling_interval_hours = float(config.sampling_interval_hours)
        if len(series) < config.min_length:
            raise ConfigurationError("Series is shorter than the minimum segment length",
                                     n=len(series), min_length=config.min_length)
        return series

    def segment(self, config, series):
        """Filter and decode; with several r_eps values keep the best MAP log score.

        Returns (history, result, sweep_scores).
        """
        models = config.model_specs
        rl = config.build_run_length()
        settings = config.build_settings()
        if settings.workers == 1:
            settings.workers = self.default_workers()

        r_eps_values = config.r_eps_values if config.is_sweep else [None]
        best = None
        sweep_scores = []
        for r_eps in r_eps_values:
            extension = config.build_extension(r_eps)
            history = run_filter(series.values, models, rl, extension, settings)
            result = viterbi_map(history)
            if r_eps is not None:
                sweep_scores.append({"r_eps": r_eps, "log_score": result.log_score,
                                     "changepoints": list(result.changepoints)})
                logging.info(f"r_eps={r_eps}: MAP log score {result.log_score:.3f}")
            if best is None or result.log_score > best[1].log_score:
                best = (history, result)
        return best[0], best[1], sweep_scores

    def report_drydown(self, segments, sampling_interval_hours=None):
        """Median and quartiles of decay rate and e-folding time over ExpDecay segments.

        Accepts SegmentSummary objects or their dict form from segments.json.
        """
        thetas = []
        intervals = []
        for segment in segments:
            if isinstance(segment, dict):
                if segment.get("kind") != ModelKind.EXP_DECAY.value:
                    continue
                theta = (segment.get("theta") or {}).get("estimate")
                interval = (segment.get("drydown") or {}).get("sampling_interval_hours", sampling_interval_hours)
            else:
                if segment.kind != ModelKind.EXP_DECAY.value:
                    continue
                theta = segment.theta_estimate
                interval = sampling_interval_hours
            if theta is None:
                raise ConfigurationError("ExpDecay segment has no theta estimate")
            thetas.append(float(theta))
            intervals.append(interval)

        if not thetas:
            logging.info("No ExpDecay segments to summarise")
            return {"count": 0, "notice": "no ExpDecay segments"}
        if any(interval is None for interval in intervals):
            raise ConfigurationError("Sampling interval is required for e-folding times")

        parameters = [drydown_transforms(theta, interval) for theta, interval in zip(thetas, intervals)]
        return {
            "count": len(parameters),
            "quantile_method": "linear",
            "decay_rate": _quartiles([p.decay_rate for p in parameters]),
            "efold_days": _quartiles([p.efold_days for p in parameters]),
        }

    def _segments_document(self, config, series, history, result, sweep_scores):
        interval = series.sampling_interval_hours
        document = result.to_dict(interval)
        for segment in document["segments"]:
            if "drydown" in segment:
                segment["drydown"]["sampling_interval_hours"] = interval
        document["extension"] = config.extension if config.needs_extension else "closed-form"
        document["models"] = [spec.to_dict() for spec in config.model_specs]
        document["log_evidence"] = float(history.log_evidence[history.n])
        document["sampling_interval_hours"] = interval
        document["start_timestamp"] = series.timestamps[0].strftime("%Y-%m-%dT%H:%M:%S")
        document["drydown_summary"] = self.report_drydown(result.segments, interval)
        if sweep_scores:
            document["r_eps_sweep"] = sweep_scores
        return document

    def _filtering_mass_frame(self, history):
        rows = [
            (t, int(s), float(np.exp(log_prob)))
            for t, step in sorted(history.steps.items())
            for s, log_prob in zip(step.candidates, step.log_probs)
        ]
        return pd.DataFrame(rows, columns=["t", "s", "probability"])

    def _fitted_frame(self, series, result):
        segment_index = np.empty(result.n, dtype=int)
        for index, segment in enumerate(result.segments, start=1):
            segment_index[segment.start:segment.end] = index
        return pd.DataFrame({
            "t": np.arange(1, result.n + 1),
            "timestamp": series.timestamps.strftime("%Y-%m-%dT%H:%M:%S"),
            "observed": series.values,
            "fitted": result.fitted_values(),
            "segment": segment_index,
            "model_index": result.model_track(),
        })

    def _manifest(self, config, status, started_at, started, notes, outputs, series=None):
        return {
            "config": config.to_dict(),
            "seed": config.seed,
            "status": status,
            "complete": status == STATUS_COMPLETE,
            "notes": notes,
            "outputs": sorted(outputs),
            "n_observations": None if series is None else len(series),
            "gaps": [] if series is None else [gap.to_dict() for gap in series.gaps],
            "versions": {
                "engine": ENGINE_VERSION,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
            },
            "started_at": started_at,
            "finished_at": _utc_now(),
            "wall_time_seconds": round(time.perf_counter() - started, 3),
        }

    def run(self, config):
        """Run one configuration and write its bundle.

        Quadrature non-convergence yields an NA bundle; other errors are raised
        after an incomplete manifest is written.
        """
        output_dir = self.bundle_dir(config)
        os.makedirs(output_dir, exist_ok=True)
        paths = {key: os.path.join(output_dir, name) for key, name in BUNDLE_FILES.items()}
        started_at, started = _utc_now(), time.perf_counter()
        logging.info(f"Segmentation run ({config.extension}, seed {config.seed}) writing to {output_dir}")

        written = []
        notes = []
        series = None
        try:
            series = self.load_series(config)
            if series.gaps:
                notes.append(f"{len(series.gaps)} gaps reported; analysed the longest contiguous block"
                             if config.longest_block else f"{len(series.gaps)} gaps reported")
            history, result, sweep_scores = self.segment(config, series)

            write_json_file(paths["segments"], self._segments_document(config, series, history, result, sweep_scores))
            written.append(BUNDLE_FILES["segments"])
            self._filtering_mass_frame(history).to_csv(paths["filtering_mass"], index=False, float_format=FLOAT_FORMAT)
            written.append(BUNDLE_FILES["filtering_mass"])

            if config.backward_draws > 0:
                sample = backward_simulate(history, n_draws=config.backward_draws,
                                           rng=np.random.default_rng([config.seed, 0xB5]))
                inclusion = pd.DataFrame({"t": np.arange(1, history.n + 1), "proportion": sample.inclusion[1:]})
                inclusion.to_csv(paths["inclusion"], index=False, float_format=FLOAT_FORMAT)
                written.append(BUNDLE_FILES["inclusion"])
            else:
                notes.append("backward simulation disabled")

            self._fitted_frame(series, result).to_csv(paths["fitted"], index=False, float_format=FLOAT_FORMAT)
            written.append(BUNDLE_FILES["fitted"])
        except NonConvergenceError as error:
            logging.warning(f"Run reported NA: {error.message}")
            notes.append(f"NA: {error.message}")
            manifest = self._manifest(config, STATUS_NA, started_at, started, notes, written, series)
            manifest["error"] = error.to_dict()
            write_json_file(paths["manifest"], manifest)
            return ReportBundle(output_dir, STATUS_NA, manifest, paths, series=series)
        except SegmentationError as error:
            logging.error(f"Run failed: {error.message}")
            manifest = self._manifest(config, STATUS_FAILED, started_at, started, notes, written, series)
            manifest["error"] = error.to_dict()
            write_json_file(paths["manifest"], manifest)
            raise

        if config.extension == "numeric-reference" and config.needs_extension:
            notes.append("quadrature converged within the subdivision cap")
        manifest = self._manifest(config, STATUS_COMPLETE, started_at, started, notes, written, series)
        if sweep_scores:
            manifest["r_eps_sweep"] = sweep_scores
        write_json_file(paths["manifest"], manifest)
        logging.info(f"Run complete: {len(result.changepoints)} changepoints, log score {result.log_score:.3f}")
        return ReportBundle(output_dir, STATUS_COMPLETE, manifest, paths, result, series)

    def execute(self, config):
        """Run a configuration and record it as a SegmentationRun row."""
        run = SegmentationRun(
            label=config.label,
            extension=config.extension,
            seed=config.seed,
            config_json=json.dumps(config.to_dict(), sort_keys=True),
            output_dir=self.bundle_dir(config),
        )
        run.mark(SegmentationRun.RUNNING)
        db.session.add(run)
        db.session.commit()
        try:
            bundle = self.run(config)
        except SegmentationError as error:
            run.mark(SegmentationRun.FAILED, error.message)
            run.manifest_json = self._read_manifest(run.output_dir)
            db.session.commit()
            raise
        except Exception as error:
            db.session.rollback()
            run.mark(SegmentationRun.FAILED, str(error))
            db.session.commit()
            raise

        run.manifest_json = json.dumps(bundle.manifest, sort_keys=True)
        run.n_observations = bundle.manifest.get("n_observations")
        if bundle.complete:
            run.mark(SegmentationRun.COMPLETE)
            run.n_changepoints = len(bundle.result.changepoints)
            run.log_score = bundle.result.log_score
        else:
            run.mark(SegmentationRun.NA, bundle.manifest.get("error", {}).get("error"))
        db.session.commit()
        logging.info(f"Segmentation run {run.id} finished with status {run.status}")
        return run, bundle

    def _read_manifest(self, output_dir):
        path = os.path.join(output_dir, BUNDLE_FILES["manifest"])
        if not os.path.isfile(path):
            return None
        with open(path) as f:
            return f.read()


# Global instance
segmentation_service = SegmentationService()
