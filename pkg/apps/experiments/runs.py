"""
Run directories: markers, manifest and the resolved config.

A run directory holds the outputs of any number of commands. Each command
that finishes writes ``COMPLETED-<command>``; a failure writes ``FAILED``
and leaves partial outputs in place.
"""
import json
import logging
import platform
import shutil
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Optional

import psutil

from apps.core.conf import framework_setting
from apps.core.errors import RunExistsError
from apps.experiments.models import ExperimentSpec, ResolvedConfig

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RESOLVED_CONFIG = "config.resolved.cfg"
FAILED = "FAILED"
PACKAGES = ("repirl", "Django", "djangorestframework", "numpy", "scipy", "psutil")


def default_output_dir(spec: ExperimentSpec) -> Path:
    name = spec.config_path.stem if spec.config_path is not None else "default"
    return Path(framework_setting("OUTPUT_ROOT")) / name


def package_versions() -> dict:
    versions = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def host_facts() -> dict:
    return {
        "platform": platform.platform(),
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_total": psutil.virtual_memory().total,
    }


class RunDirectory:
    def __init__(self, path):
        self.path = Path(path)

    def completed_marker(self, command: str) -> Path:
        return self.path / f"COMPLETED-{command}"

    @property
    def failed_marker(self) -> Path:
        return self.path / FAILED

    def prepare(self, command: str, force: bool = False):
        """Create the directory; refuse to redo a completed command unless ``force``."""
        self.path.mkdir(parents=True, exist_ok=True)
        marker = self.completed_marker(command)
        if marker.exists():
            if not force:
                raise RunExistsError(
                    f"{self.path} already holds a completed {command} run; pass --force"
                )
            marker.unlink()
            logger.info(f"Overwriting the {command} outputs in {self.path}")
        if self.failed_marker.exists():
            self.failed_marker.unlink()

    def file(self, *parts: str) -> Path:
        return self.path.joinpath(*parts)

    def write_resolved_config(self, resolved: ResolvedConfig) -> Path:
        path = self.file(RESOLVED_CONFIG)
        path.write_text(resolved.text, encoding="utf-8")
        return path

    def write_manifest(self, command: str, resolved: ResolvedConfig) -> Path:
        manifest = {
            "command": command,
            "config_sha256": resolved.digest,
            "seed": resolved.train.seed,
            "method": resolved.experiment.method,
            "mode": str(resolved.experiment.mode),
            "versions": package_versions(),
            "host": host_facts(),
        }
        path = self.file(MANIFEST)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def mark_completed(self, command: str):
        self.completed_marker(command).write_text("", encoding="utf-8")

    def mark_failed(self, command: str, error: BaseException, category: Optional[str] = None):
        category = category or getattr(error, "category", "unexpected")
        self.failed_marker.write_text(f"{command}: {category}: {error}\n", encoding="utf-8")

    def clear(self, *parts: str):
        """Remove a subdirectory left by an earlier run of the same command."""
        target = self.file(*parts)
        if target.is_dir():
            shutil.rmtree(target)

    def resolve(self, path_text: str, default: str) -> Path:
        """A user path relative to the run directory, or ``default`` inside it."""
        if not path_text:
            return self.file(*Path(default).parts)
        path = Path(path_text)
        return path if path.is_absolute() else self.path / path
