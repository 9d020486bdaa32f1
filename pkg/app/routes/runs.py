from flask import current_app, request
from flask_restx import Namespace, Resource, fields
from cachetools import TTLCache

from app.database import db
from app.errors import SegmentationError
from app.helpers import error_response, load_json_file
from app.limiter import limiter
from app.models import SegmentationRun
from app.services.run_config import RunConfig
from app.services.runner import BUNDLE_FILES, segmentation_service

import logging
import os
import threading

runs_ns = Namespace('runs', description='Segmentation runs')

# segments.json documents by run id; expiry set from RESULT_CACHE_TTL on first use
_segments_cache = None
_segments_cache_lock = threading.Lock()


def get_segments_cache():
    global _segments_cache
    with _segments_cache_lock:
        if _segments_cache is None:
            _segments_cache = TTLCache(maxsize=64, ttl=current_app.config.get('RESULT_CACHE_TTL', 300))
        return _segments_cache


def clear_segments_cache():
    """Drop all cached segment documents"""
    with _segments_cache_lock:
        if _segments_cache is not None:
            _segments_cache.clear()
    logging.info("Segments cache cleared")


def segment_rate_limit():
    return current_app.config.get('SEGMENT_RATE_LIMIT', '10 per minute')


# Models
model_entry = runs_ns.model('ModelEntry', {
    'kind': fields.String(required=True, description='Mean, LinearTrend, ExpDecay or Periodic'),
    'prior_prob': fields.Float(description='Prior model probability'),
    'coef_prior': fields.Raw(required=True, description='mean, scale, shape, rate, optional lower/upper'),
    'theta_prior': fields.Raw(description='mean, sd, optional lower/upper'),
})

run_config_model = runs_ns.model('RunConfig', {
    'models': fields.List(fields.Nested(model_entry), required=True),
    'input_path': fields.String(description='CSV path relative to the server input directory'),
    'series': fields.Raw(description='Inline series: values, optional timestamps and sampling interval'),
    'extension': fields.String(description='pf, og or numeric-reference', default='pf'),
    'hazard': fields.Float(default=0.005),
    'min_length': fields.Integer(default=10),
    'n_particles': fields.Integer(default=1000),
    'r_eps': fields.Raw(description='Number, list of numbers, or "sweep"'),
    'seed': fields.Integer(default=0),
    'output_dir': fields.String(description='Bundle directory relative to the server output directory'),
    'label': fields.String(description='Run label'),
})

run_model = runs_ns.model('SegmentationRun', {
    'id': fields.Integer(description='Run ID'),
    'label': fields.String(description='Run label'),
    'status': fields.String(description='PENDING, RUNNING, COMPLETE, NA or FAILED'),
    'extension': fields.String(description='Theta extension'),
    'seed': fields.Integer(description='Seed'),
    'config': fields.Raw(description='Run configuration'),
    'output_dir': fields.String(description='Bundle directory'),
    'n_observations': fields.Integer(description='Series length'),
    'n_changepoints': fields.Integer(description='Changepoints in the MAP segmentation'),
    'log_score': fields.Float(description='MAP log score'),
    'manifest': fields.Raw(description='Run manifest'),
    'error': fields.String(description='Error message'),
    'created_at': fields.String(description='Creation date'),
    'finished_at': fields.String(description='Completion date')
})


@runs_ns.route('')
class RunList(Resource):
    @runs_ns.response(200, 'Success', [run_model])
    @runs_ns.response(500, 'Internal server error')
    def get(self):
        """List segmentation runs, newest first"""
        try:
            runs = SegmentationRun.query.order_by(SegmentationRun.id.desc()).all()
            return [run.to_dict() for run in runs], 200
        except Exception as e:
            logging.error(f"Error fetching runs: {str(e)}")
            return {"error": "Failed to fetch runs. Please try again later."}, 500

    @limiter.limit(segment_rate_limit)
    @runs_ns.expect(run_config_model)
    @runs_ns.response(201, 'Run finished (COMPLETE or NA)', run_model)
    @runs_ns.response(400, 'Invalid configuration or input')
    @runs_ns.response(422, 'Numerical failure')
    @runs_ns.response(500, 'Internal server error')
    def post(self):
        """Run a segmentation synchronously and record it"""
        payload = request.get_json(silent=True)
        if payload is None:
            return {"error": "A JSON body is required."}, 400
        try:
            config = RunConfig.from_dict(payload)
            segmentation_service.confine(config, current_app.config.get('SEGMENTATION_INPUT_DIR'))
            run, _ = segmentation_service.execute(config)
            return run.to_dict(), 201
        except SegmentationError as e:
            return error_response(e)
        except Exception as e:
            db.session.rollback()
            return error_response(e)


@runs_ns.route('/<int:id>')
class RunResource(Resource):
    @runs_ns.response(200, 'Success', run_model)
    @runs_ns.response(404, 'Run not found')
    def get(self, id):
        """Get one segmentation run"""
        run = db.session.get(SegmentationRun, id)
        if not run:
            return {"error": "Run not found."}, 404
        return run.to_dict(), 200


@runs_ns.route('/<int:id>/segments')
class RunSegments(Resource):
    @runs_ns.response(200, 'Success')
    @runs_ns.response(404, 'Run or segments not found')
    @runs_ns.response(409, 'Run did not complete')
    def get(self, id):
        """Get the segments document of a completed run"""
        cache = get_segments_cache()
        if id in cache:
            logging.debug(f"Returning segments of run {id} from cache")
            return cache[id], 200

        run = db.session.get(SegmentationRun, id)
        if not run:
            return {"error": "Run not found."}, 404
        if run.status != SegmentationRun.COMPLETE:
            return {"error": f"Run status is {run.status}; no segments available."}, 409
        try:
            document = load_json_file(os.path.join(run.output_dir, BUNDLE_FILES["segments"]))
        except (FileNotFoundError, ValueError) as e:
            logging.error(f"Segments of run {id} unavailable: {e}")
            return {"error": "Segments file not found."}, 404
        cache[id] = document
        return document, 200
