from flask import request
from flask_restx import Namespace, Resource, fields

from app.errors import SegmentationError
from app.helpers import error_response
from app.services.inference import evaluate_detection

evaluate_ns = Namespace('evaluate', description='Changepoint detection metrics')

evaluate_model = evaluate_ns.model('EvaluateInput', {
    'detected': fields.List(fields.Integer, required=True, description='Detected changepoints'),
    'truth': fields.List(fields.Integer, required=True, description='True changepoints'),
    'tolerance': fields.Integer(default=10, description='Match window (strict)'),
    'model_track_detected': fields.List(fields.Integer, description='Detected model index per time'),
    'model_track_truth': fields.List(fields.Integer, description='True model index per time'),
})

metrics_model = evaluate_ns.model('DetectionMetrics', {
    'true_positive_rate': fields.Float,
    'precision': fields.Float,
    'model_selection_accuracy': fields.Float,
    'matches': fields.List(fields.List(fields.Integer)),
})


@evaluate_ns.route('')
class Evaluate(Resource):
    @evaluate_ns.expect(evaluate_model)
    @evaluate_ns.response(200, 'Success', metrics_model)
    @evaluate_ns.response(400, 'Bad Request')
    def post(self):
        """Score detected changepoints against the truth"""
        payload = request.get_json(silent=True) or {}
        if 'detected' not in payload or 'truth' not in payload:
            return {"error": "detected and truth are required."}, 400
        try:
            metrics = evaluate_detection(
                payload['detected'],
                payload['truth'],
                int(payload.get('tolerance', 10)),
                payload.get('model_track_detected'),
                payload.get('model_track_truth'),
            )
            return metrics.to_dict(), 200
        except SegmentationError as e:
            return error_response(e)
        except (TypeError, ValueError) as e:
            return {"error": f"Invalid input: {e}"}, 400
