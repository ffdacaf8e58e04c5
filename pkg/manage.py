#!/usr/bin/env python
"""
repirl management script.

    python manage.py repirl train --config config/experiments/parity.cfg
    python manage.py                # help of the repirl command
"""
from apps.experiments.entrypoint import manage

if __name__ == "__main__":
    manage()
