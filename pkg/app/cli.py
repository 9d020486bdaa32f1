"""
Flask CLI commands: flask simulate | segment | evaluate | report.

Each command prints a JSON document on stdout. Failures print the error as
JSON on stderr and exit with 2 for segmentation errors, 1 otherwise.
"""
import functools
import json
import logging

import click
import numpy as np
from flask.cli import with_appcontext

from app.errors import ConfigurationError, SegmentationError, jsonable
from app.helpers import load_json_file, write_json_file
from app.services.inference import evaluate_detection
from app.services.run_config import load_run_config
from app.services.runner import segmentation_service
from app.services.simkit import SCENARIO_PRESETS, ScenarioSpec, preset, write_scenario


def _echo_json(data):
    click.echo(json.dumps(jsonable(data), indent=2, sort_keys=True))


def _reports_errors(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SegmentationError as error:
            logging.error(f"{command.__name__} failed: {error.message}")
            click.echo(json.dumps(error.to_dict(), sort_keys=True), err=True)
            raise SystemExit(2)
        except (OSError, ValueError) as error:
            logging.error(f"{command.__name__} failed: {error}")
            click.echo(json.dumps({"error": str(error), "code": "error", "details": {}}, sort_keys=True), err=True)
            raise SystemExit(1)
    return wrapper


def _load_document(path):
    try:
        return load_json_file(path)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigurationError(str(e), path=path)


def _track_from_segments(document):
    track = np.zeros(document["n"], dtype=int)
    for segment in document["segments"]:
        track[segment["start"]:segment["end"]] = segment["model_index"]
    return track


@click.command("simulate")
@click.option("--scenario", type=click.Choice(sorted(SCENARIO_PRESETS)), help="Preset scenario id.")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), help="ScenarioSpec JSON file.")
@click.option("--seed", type=int, default=None, help="Noise seed (overrides the scenario file).")
@click.option("--noise-sd", type=float, default=None, help="Noise standard deviation (overrides the scenario file).")
@click.option("--output-dir", type=click.Path(file_okay=False), required=True)
@with_appcontext
@_reports_errors
def simulate_command(scenario, spec_path, seed, noise_sd, output_dir):
    """Generate a synthetic series with its truth sidecar."""
    if (scenario is None) == (spec_path is None):
        raise ConfigurationError("Give exactly one of --scenario or --spec")
    if scenario is not None:
        spec = preset(scenario)
    else:
        spec = ScenarioSpec.from_dict(_load_document(spec_path))
    if seed is not None:
        spec.seed = seed
    if noise_sd is not None:
        spec.noise_sd = noise_sd
    spec.validate()
    _echo_json(write_scenario(spec, output_dir))


@click.command("segment")
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--output-dir", type=click.Path(file_okay=False), default=None, help="Bundle directory.")
@click.option("--label", default=None, help="Run label stored with the run record.")
@with_appcontext
@_reports_errors
def segment_command(config_path, output_dir, label):
    """Run a segmentation configuration and write its report bundle."""
    config = load_run_config(config_path)
    if output_dir is not None:
        config.output_dir = output_dir
    if label is not None:
        config.label = label
    run, bundle = segmentation_service.execute(config)
    _echo_json({"run_id": run.id, "status": run.status, "output_dir": bundle.output_dir,
                "changepoints": None if bundle.result is None else bundle.result.changepoints})


@click.command("evaluate")
@click.option("--detected", "detected_path", type=click.Path(dir_okay=False), required=True,
              help="segments.json of a run, or a JSON list of changepoints.")
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False), required=True,
              help="truth.json, or a JSON list of changepoints.")
@click.option("--tolerance", type=int, default=10, show_default=True)
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None)
@with_appcontext
@_reports_errors
def evaluate_command(detected_path, truth_path, tolerance, output_path):
    """Match detected changepoints to the truth and report detection metrics."""
    detected = _load_document(detected_path)
    truth = _load_document(truth_path)
    detected_track = truth_track = None
    if isinstance(detected, dict):
        detected_track = _track_from_segments(detected)
        detected = detected["changepoints"]
    if isinstance(truth, dict):
        truth_track = truth.get("model_track")
        truth = truth["changepoints"]
    if detected_track is None or truth_track is None:
        detected_track = truth_track = None
    metrics = evaluate_detection(detected, truth, tolerance, detected_track, truth_track).to_dict()
    metrics["tolerance"] = tolerance
    if output_path:
        write_json_file(output_path, metrics)
    _echo_json(metrics)


@click.command("report")
@click.argument("segments_path", type=click.Path(dir_okay=False))
@click.option("--sampling-interval-hours", type=float, default=None)
@with_appcontext
@_reports_errors
def report_command(segments_path, sampling_interval_hours):
    """Summarise decay rates and e-folding times across ExpDecay segments."""
    document = _load_document(segments_path)
    segments = document.get("segments", []) if isinstance(document, dict) else document
    interval = sampling_interval_hours
    if interval is None and isinstance(document, dict):
        interval = document.get("sampling_interval_hours")
    if interval is not None:
        segments = [dict(segment, drydown={**(segment.get("drydown") or {}), "sampling_interval_hours": interval})
                    for segment in segments]
    _echo_json(segmentation_service.report_drydown(segments, interval))


def register_commands(app):
    for command in (simulate_command, segment_command, evaluate_command, report_command):
        app.cli.add_command(command)
