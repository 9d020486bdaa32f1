import os

# Load environment variables from .env file (if present)
from dotenv import load_dotenv
load_dotenv()

SQLALCHEMY_DATABASE_URI = os.getenv('SQLALCHEMY_DATABASE_URI')

# Validate database URI in production
if not SQLALCHEMY_DATABASE_URI:
    raise ValueError("SQLALCHEMY_DATABASE_URI environment variable must be set in production")

SEGMENTATION_OUTPUT_DIR = os.getenv('SEGMENTATION_OUTPUT_DIR')
if not SEGMENTATION_OUTPUT_DIR:
    raise ValueError("SEGMENTATION_OUTPUT_DIR environment variable must be set in production")

# Unset disables input_path on POST /runs
SEGMENTATION_INPUT_DIR = os.getenv('SEGMENTATION_INPUT_DIR')

ENGINE_WORKERS = int(os.getenv('ENGINE_WORKERS', 4))
if ENGINE_WORKERS < 1:
    raise ValueError("ENGINE_WORKERS must be at least 1")

RESULT_CACHE_TTL = int(os.getenv('RESULT_CACHE_TTL', 300))  # in seconds

SEGMENT_RATE_LIMIT = os.getenv('SEGMENT_RATE_LIMIT', '10 per minute')

# CORS origins - comma-separated list in environment variable (REQUIRED in production)
CORS_ORIGINS = os.getenv('CORS_ORIGINS_PROD')
if not CORS_ORIGINS:
    raise ValueError("CORS_ORIGINS_PROD environment variable must be set in production")
CORS_ORIGINS = CORS_ORIGINS.split(',')
