"""
Rate limiter instance for the application
"""
import os

from flask_limiter import Limiter
from flask_limiter.util import get_remote_address

# Segmentation runs are CPU-bound; POST /runs carries its own tighter limit (SEGMENT_RATE_LIMIT)
limiter = Limiter(
    key_func=get_remote_address,
    default_limits=os.getenv('RATELIMIT_DEFAULT', '500 per day;100 per hour').split(';'),
    storage_uri=os.getenv('RATELIMIT_STORAGE_URI', 'memory://'),
)
