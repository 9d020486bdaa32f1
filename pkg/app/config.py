import os

# Load environment variables from .env file in development
from dotenv import load_dotenv
load_dotenv()

SQLALCHEMY_DATABASE_URI = os.getenv('SQLALCHEMY_DATABASE_URI', 'sqlite:///segmentation.db')

# Report bundles land in <SEGMENTATION_OUTPUT_DIR>/<run label> unless a run names its own directory
SEGMENTATION_OUTPUT_DIR = os.getenv('SEGMENTATION_OUTPUT_DIR', './output')

# CSV files named by POST /runs are read from here only
SEGMENTATION_INPUT_DIR = os.getenv('SEGMENTATION_INPUT_DIR', './data')

# Threads used for per-candidate updates; results do not depend on it
ENGINE_WORKERS = int(os.getenv('ENGINE_WORKERS', 1))
if ENGINE_WORKERS < 1:
    raise ValueError("ENGINE_WORKERS must be at least 1")

RESULT_CACHE_TTL = int(os.getenv('RESULT_CACHE_TTL', 300))  # in seconds

SEGMENT_RATE_LIMIT = os.getenv('SEGMENT_RATE_LIMIT', '30 per minute')

# CORS origins - comma-separated list in environment variable
CORS_ORIGINS = os.getenv('CORS_ORIGINS_DEV', 'http://localhost:8080,http://127.0.0.1:8080').split(',')
