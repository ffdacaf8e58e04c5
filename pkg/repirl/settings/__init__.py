"""
Settings module initialization.
Provides easy imports for different environments.
"""

import os

# Default to development settings
environment = os.environ.get("DJANGO_SETTINGS_MODULE", "repirl.settings.development")

# Import the appropriate settings
if "production" in environment:
    from .production import *  # noqa: F401,F403
else:
    from .development import *  # noqa: F401,F403
