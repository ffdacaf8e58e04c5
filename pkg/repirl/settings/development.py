"""
Development settings for repirl.
"""

from .base import *  # noqa: F401,F403
from .base import LOGGING

DEBUG = True

# Development-specific logging
LOGGING["handlers"]["console"]["formatter"] = "simple"
LOGGING["loggers"]["repirl"]["level"] = "DEBUG"
