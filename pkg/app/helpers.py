import json
import logging
import os

from app.errors import SegmentationError, jsonable


def load_json_file(path):
    """Read a JSON document, raising FileNotFoundError/ValueError with the path in the message"""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path} does not exist")
    with open(path, "r") as file:
        try:
            return json.load(file)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path} is not valid JSON: {e}")


def write_json_file(path, data):
    """Write sorted, indented JSON so identical runs give identical files"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as file:
        json.dump(jsonable(data), file, indent=2, sort_keys=True)
        file.write("\n")
    logging.debug(f"Wrote {path}")
    return path


def error_response(error):
    """(body, status) pair for a resource method"""
    if isinstance(error, SegmentationError):
        logging.error(f"{error.code}: {error.message} {error.details}")
        return error.to_dict(), error.status_code
    logging.error(f"Unexpected error: {error}")
    return {"error": "An unexpected error occurred"}, 500
