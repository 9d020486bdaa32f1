import json
import math

import numpy as np
import pytest

from app.errors import ConfigurationError, NonConvergenceError, jsonable
from app.helpers import error_response, load_json_file, write_json_file


class TestJsonFiles:
    """Test the JSON file helpers."""

    def test_write_then_load(self, tmp_path):
        """Test a written document reads back with numpy values coerced."""
        path = write_json_file(str(tmp_path / 'nested' / 'out.json'),
                               {"b": np.array([1.0, 2.0]), "a": np.int64(3)})
        assert load_json_file(path) == {"a": 3, "b": [1.0, 2.0]}

    def test_sorted_keys(self, tmp_path):
        """Test keys are written in sorted order."""
        path = write_json_file(str(tmp_path / 'out.json'), {"z": 1, "a": 2})
        with open(path) as f:
            text = f.read()
        assert text.index('"a"') < text.index('"z"')
        assert text.endswith("\n")

    def test_missing_file(self, tmp_path):
        """Test a missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_json_file(str(tmp_path / 'absent.json'))

    def test_invalid_json(self, tmp_path):
        """Test a malformed file raises ValueError naming the path."""
        path = tmp_path / 'bad.json'
        path.write_text("{not json")
        with pytest.raises(ValueError, match="bad.json"):
            load_json_file(str(path))


class TestJsonable:
    """Test coercion to plain JSON types."""

    def test_non_finite_floats(self):
        """Test NaN and infinities become None."""
        assert jsonable([1.5, math.nan, np.float64(np.inf)]) == [1.5, None, None]

    def test_tuples_and_keys(self):
        """Test tuples become lists and keys become strings."""
        assert jsonable({1: (2, 3)}) == {"1": [2, 3]}


class TestErrorResponse:
    """Test error bodies for the API."""

    def test_segmentation_error(self):
        """Test service errors carry their code and status."""
        body, status = error_response(ConfigurationError("hazard out of range", hazard=2.0))
        assert status == 400
        assert body == {"error": "hazard out of range", "code": "configuration_error",
                        "details": {"hazard": 2.0}}

    def test_numerical_error_status(self):
        """Test numerical failures map to 422."""
        _, status = error_response(NonConvergenceError("cap reached"))
        assert status == 422

    def test_unexpected_error(self):
        """Test other exceptions are hidden behind a generic 500."""
        body, status = error_response(RuntimeError("boom"))
        assert status == 500
        assert body == {"error": "An unexpected error occurred"}
