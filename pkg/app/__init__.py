import logging
from flask import Flask
from flask_cors import CORS
from flask_restx import Api
from app.cli import register_commands
from app.routes import register_routes
from .database import db
from .limiter import limiter
import os

def create_app():

    app = Flask(__name__)

    # Load configuration first (needed for CORS_ORIGINS)
    is_production = os.environ.get('FLASK_ENV') == 'production'
    logging.debug(f"IS_PRODUCTION:{is_production}")
    if is_production:
        app.config.from_pyfile('config_prod.py')
    else:
        app.config.from_pyfile('config.py')

    CORS(app,
         origins=app.config['CORS_ORIGINS'],
         allow_headers=["Content-Type", "X-Requested-With"],
         methods=["GET", "POST", "OPTIONS"],
         max_age=600
    )

    db.init_app(app)
    limiter.init_app(app)

    api = Api(
        app,
        version='1.0',
        title='Changepoint Segmentation API',
        description='Bayesian online changepoint detection with segment model selection',
        doc='/docs/'
    )

    # Ensure tables exist
    with app.app_context():
        db.create_all()
        logging.info("Database initialized.")

    register_routes(app, api)
    register_commands(app)

    return app
