"""Access to the ``REPIRL`` settings dict with library defaults."""
from pathlib import Path

from django.conf import settings

DEFAULTS = {
    "OUTPUT_ROOT": Path("runs"),
    "ENUMERATION_CAP": 2_000_000,
    "WORKERS": 1,
}


def framework_setting(name):
    """Return ``settings.REPIRL[name]`` or the library default."""
    values = getattr(settings, "REPIRL", {}) if settings.configured else {}
    if name in values:
        return values[name]
    return DEFAULTS[name]
