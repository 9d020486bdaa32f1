from .simulate import simulate_ns
from .runs import runs_ns
from .evaluate import evaluate_ns
from .reports import reports_ns

def register_routes(app, api):
    api.add_namespace(simulate_ns, path="/simulate")
    api.add_namespace(runs_ns, path="/runs")
    api.add_namespace(evaluate_ns, path="/evaluate")
    api.add_namespace(reports_ns, path="/reports")
