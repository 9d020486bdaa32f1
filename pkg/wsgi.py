# Gunicorn entry point: gunicorn wsgi:application
from run import app

application = app
