import pytest
import os
import sys
import tempfile
import shutil

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from app import create_app
from app.database import db
from app.models import SegmentationRun
from app.services.model_core import ModelSpec, ThetaPrior
from tests.factories import make_coef_prior


@pytest.fixture(scope='session')
def app():
    """Create application for the tests."""
    # Create a temporary file for the database
    db_fd, db_path = tempfile.mkstemp()
    output_dir = tempfile.mkdtemp()

    # Set test environment variables
    os.environ['FLASK_ENV'] = 'testing'
    os.environ['SQLALCHEMY_DATABASE_URI'] = f'sqlite:///{db_path}'
    os.environ['SEGMENTATION_OUTPUT_DIR'] = output_dir
    os.environ['TESTING'] = 'True'

    # Create app
    app = create_app()
    app.config['TESTING'] = True
    app.config['SQLALCHEMY_DATABASE_URI'] = f'sqlite:///{db_path}'

    # Disable rate limiting for tests
    from app.limiter import limiter
    limiter.enabled = False

    with app.app_context():
        db.create_all()

    yield app

    # Cleanup - close database connections first
    with app.app_context():
        db.session.remove()
        db.engine.dispose()

    shutil.rmtree(output_dir, ignore_errors=True)
    try:
        os.close(db_fd)
        os.unlink(db_path)
    except (PermissionError, OSError):
        # On Windows, file might still be locked
        pass


@pytest.fixture(scope='function')
def client(app):
    """Create a test client."""
    return app.test_client()


@pytest.fixture(scope='function')
def runner(app):
    """Create a test CLI runner."""
    return app.test_cli_runner()


@pytest.fixture(scope='function', autouse=True)
def reset_segments_cache():
    """Empty the segments cache around every test."""
    from app.routes.runs import clear_segments_cache
    clear_segments_cache()
    yield
    clear_segments_cache()


@pytest.fixture(scope='function')
def db_session(app):
    """Create a new database session for a test."""
    with app.app_context():
        db.session.query(SegmentationRun).delete()
        db.session.commit()

        yield db.session

        db.session.rollback()
        db.session.close()


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def mean_model():
    return ModelSpec('Mean', 1.0, make_coef_prior(1))


@pytest.fixture
def linear_model():
    return ModelSpec('LinearTrend', 1.0, make_coef_prior(2))


@pytest.fixture
def exp_model():
    return ModelSpec('ExpDecay', 1.0, make_coef_prior(2), ThetaPrior(-2.0, 0.7, -6.0, 1.0))


@pytest.fixture
def periodic_model():
    return ModelSpec('Periodic', 1.0, make_coef_prior(2), ThetaPrior(8.0, 2.0, 2.0, 20.0))


@pytest.fixture
def closed_form_models():
    """Mean and LinearTrend with equal prior probabilities."""
    return [
        ModelSpec('Mean', 0.5, make_coef_prior(1)),
        ModelSpec('LinearTrend', 0.5, make_coef_prior(2)),
    ]


@pytest.fixture
def mean_config_models():
    """Run-configuration model entries: Mean and LinearTrend."""
    return [
        {"kind": "Mean", "coef_prior": {"mean": [0.0], "scale": [[100.0]], "shape": 2.0, "rate": 0.05}},
        {"kind": "LinearTrend", "coef_prior": {"mean": [0.0, 0.0], "scale": [[100.0, 0.0], [0.0, 100.0]],
                                               "shape": 2.0, "rate": 0.05}},
    ]


@pytest.fixture
def step_series():
    """Two flat levels with a jump after observation 30."""
    values = np.concatenate([np.full(30, 1.0), np.full(30, 4.0)])
    noise = np.random.default_rng(7).normal(0.0, 0.1, values.size)
    return values + noise


@pytest.fixture
def write_csv(tmp_path):
    """Write timestamp,value rows to a CSV file and return its path."""
    def _write(rows, name='series.csv', header='timestamp,value'):
        path = tmp_path / name
        lines = [header] + [f"{timestamp},{value}" for timestamp, value in rows]
        path.write_text("\n".join(lines) + "\n")
        return str(path)
    return _write
