"""
Command-line entry points: the ``repirl`` console script and ``manage.py``.
"""
import os
import sys
from typing import Optional, Sequence

SETTINGS_MODULE = "repirl.settings"
COMMAND = "repirl"


def execute(argv: Sequence[str]):
    """Run a management command line under the repirl settings."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", SETTINGS_MODULE)
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "repirl runs on Django; install the project with `pip install -e .` "
            "in an activated virtual environment"
        ) from exc
    execute_from_command_line(list(argv))


def manage(argv: Optional[Sequence[str]] = None):
    """``manage.py`` with no arguments prints the help of the repirl command."""
    argv = list(sys.argv if argv is None else argv)
    if len(argv) < 2:
        program = argv[0] if argv else "manage.py"
        argv = [program, COMMAND, "--help"]
    execute(argv)


def run(argv: Optional[Sequence[str]] = None):
    """``repirl <command> [options]``."""
    args = sys.argv[1:] if argv is None else list(argv)
    execute([COMMAND, COMMAND, *args])
