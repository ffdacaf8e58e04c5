"""
Production settings for repirl.

Used for long unattended runs: quieter console, a log file under the
output root.
"""

from decouple import config

from .base import *  # noqa: F401,F403
from .base import LOGGING, REPIRL

DEBUG = False

LOG_DIR = REPIRL["OUTPUT_ROOT"] / "logs"
LOG_DIR.mkdir(parents=True, exist_ok=True)

LOGGING["handlers"]["file"] = {
    "class": "logging.FileHandler",
    "filename": LOG_DIR / "repirl.log",
    "formatter": "verbose",
}
LOGGING["loggers"]["apps"]["handlers"] = ["console", "file"]
LOGGING["loggers"]["apps"]["level"] = config("REPIRL_LOG_LEVEL", default="INFO")
LOGGING["loggers"]["repirl"]["handlers"] = ["console", "file"]
