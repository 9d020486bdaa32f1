from flask import request
from flask_restx import Namespace, Resource, fields

from app.errors import SegmentationError
from app.helpers import error_response
from app.services.runner import segmentation_service

reports_ns = Namespace('reports', description='Summaries of segmentation results')

drydown_input_model = reports_ns.model('DrydownInput', {
    'segments': fields.List(fields.Raw, required=True, description='Segments as found in segments.json'),
    'sampling_interval_hours': fields.Float(description='Sampling interval of the analysed series'),
})


@reports_ns.route('/drydown')
class DrydownReport(Resource):
    @reports_ns.expect(drydown_input_model)
    @reports_ns.response(200, 'Success')
    @reports_ns.response(400, 'Bad Request')
    def post(self):
        """Median and quartiles of decay rate and e-folding days over ExpDecay segments"""
        payload = request.get_json(silent=True) or {}
        segments = payload.get('segments')
        if not isinstance(segments, list):
            return {"error": "segments list is required."}, 400
        try:
            return segmentation_service.report_drydown(segments, payload.get('sampling_interval_hours')), 200
        except SegmentationError as e:
            return error_response(e)
