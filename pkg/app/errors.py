"""
Exception hierarchy shared by the numerical services, the HTTP API and the CLI.
"""
import math


class SegmentationError(Exception):
    """Base class for every error raised by the segmentation services."""

    status_code = 500
    code = "segmentation_error"

    def __init__(self, message, /, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        return {"error": self.message, "code": self.code, "details": jsonable(self.details)}


class ConfigurationError(SegmentationError):
    status_code = 400
    code = "configuration_error"


class DegenerateSupportError(ConfigurationError):
    code = "degenerate_support"


class DomainError(SegmentationError):
    status_code = 400
    code = "domain_error"


class IngestionError(SegmentationError):
    status_code = 400
    code = "ingestion_error"


class NumericalError(SegmentationError):
    status_code = 422
    code = "numerical_error"


class ParticleCollapseError(NumericalError):
    code = "particle_collapse"


class EmptyCandidateSetError(NumericalError):
    code = "empty_candidate_set"


class NonConvergenceError(NumericalError):
    code = "non_convergence"


class SequencingError(SegmentationError):
    code = "sequencing_error"


class HistoryIntegrityError(SegmentationError):
    code = "history_integrity"


def jsonable(value):
    """Coerce numpy scalars and containers to plain JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if hasattr(value, "ndim") and getattr(value, "ndim", 0) > 0:
        return jsonable(value.tolist())
    if hasattr(value, "item") and callable(value.item):
        try:
            return jsonable(value.item())
        except (TypeError, ValueError):
            return str(value)
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    return str(value)
