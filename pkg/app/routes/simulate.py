from flask import request
from flask_restx import Namespace, Resource, fields

from app.helpers import error_response
from app.services.simkit import generate, preset_catalogue, scenario_from_payload

import logging

simulate_ns = Namespace('simulate', description='Synthetic scenario generation')

# Models
scenario_model = simulate_ns.model('Scenario', {
    'scenario': fields.String(description='Preset id (S1-S4); replaces the full spec fields'),
    'seed': fields.Integer(description='Noise seed'),
    'noise_sd': fields.Float(description='Noise standard deviation'),
    'n': fields.Integer(description='Series length'),
    'scenario_id': fields.String(description='S1-S4 or Custom'),
    'changepoints': fields.List(fields.Integer, description='Changepoint positions'),
    'models': fields.List(fields.Integer, description='1-based model index per segment'),
    'model_kinds': fields.List(fields.String, description='Model kinds indexed by the model indices'),
    'coefficients': fields.List(fields.Raw, description='Coefficients per segment'),
    'thetas': fields.List(fields.Raw, description='Theta per segment, null where unused'),
})

series_model = simulate_ns.model('SimulatedSeries', {
    'spec': fields.Raw(description='Scenario spec used'),
    'series': fields.Raw(description='timestamps, values and sampling interval'),
    'truth': fields.Raw(description='changepoints, model_track and theta_track'),
})


@simulate_ns.route('')
class Simulate(Resource):
    @simulate_ns.expect(scenario_model)
    @simulate_ns.response(200, 'Success', series_model)
    @simulate_ns.response(400, 'Invalid scenario')
    @simulate_ns.response(500, 'Internal server error')
    def post(self):
        """Generate a synthetic series and its truth tracks"""
        payload = request.get_json(silent=True)
        if payload is None:
            return {"error": "A JSON body is required."}, 400
        try:
            spec = scenario_from_payload(payload)
            series, truth = generate(spec)
            logging.debug(f"Simulated {spec.scenario_id} with seed {spec.seed}")
            return {"spec": spec.to_dict(), "series": series.to_dict(), "truth": truth.to_dict()}, 200
        except Exception as e:
            return error_response(e)


@simulate_ns.route('/presets')
class PresetList(Resource):
    @simulate_ns.response(200, 'Success')
    def get(self):
        """List the preset scenarios with their candidate model lists"""
        return preset_catalogue(), 200
