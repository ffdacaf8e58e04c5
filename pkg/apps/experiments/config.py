"""
Experiment config files.

A config is key=value text with the section headers ``[task]``, ``[train]``,
``[eval]``, ``[experiment]`` and ``[ablate]``. Every section is optional;
missing keys take their defaults. ``[ablate]`` maps train keys to
``|``-separated value lists whose product forms the ablation grid.
"""
import configparser
import io
import itertools
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from rest_framework import serializers

from apps.core.conf import framework_setting
from apps.core.errors import ConfigParseError, ConfigValidationError
from apps.evaluation.serializers import EvalConfigSerializer, eval_config_section
from apps.experiments.models import SECTIONS, ResolvedConfig
from apps.experiments.serializers import ExperimentSettingsSerializer, experiment_section
from apps.mdp.serializers import TaskConfigSerializer, task_config_section
from apps.trainer.models import TrainConfig
from apps.trainer.serializers import TrainConfigSerializer, train_config_section

logger = logging.getLogger(__name__)

SERIALIZERS = {
    "task": TaskConfigSerializer,
    "train": TrainConfigSerializer,
    "eval": EvalConfigSerializer,
    "experiment": ExperimentSettingsSerializer,
}
SEEDED_SECTIONS = ("task", "train", "eval")
GRID_SEPARATOR = "|"


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    return parser


def read_sections(text: str, source: str = "<config>") -> Dict[str, Dict[str, str]]:
    """Section -> key -> raw string; structural problems carry the line number."""
    parser = _parser()
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("expected a [section] header before the first key", exc.lineno)
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigParseError(exc.message.split(": ", 1)[-1], exc.lineno)
    except configparser.ParsingError as exc:
        line, content = exc.errors[0]
        raise ConfigParseError(f"cannot parse {content.strip()!r}", line)
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigValidationError(name, f"unknown section; expected one of {SECTIONS}")
        sections[name] = {key: value.strip() for key, value in parser.items(name)}
    return sections


def _known_keys(section: str) -> List[str]:
    if section == "ablate":
        return TrainConfig.field_names()
    return list(SERIALIZERS[section]().fields)


def apply_overrides(sections: Dict[str, Dict[str, str]], overrides: Iterable[str]):
    """
    Apply ``key=value`` overrides in order. ``key`` is ``section.key`` or a bare
    key that names a field of exactly one section.
    """
    for override in overrides:
        if "=" not in override:
            raise ConfigParseError(f"override {override!r} is not key=value")
        key, value = (part.strip() for part in override.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigValidationError(key, "unknown section")
        else:
            owners = [s for s in SECTIONS if s != "ablate" and key in _known_keys(s)]
            if len(owners) != 1:
                raise ConfigValidationError(
                    key, f"matches sections {owners or 'none'}; use section.key"
                )
            section, name = owners[0], key
        sections.setdefault(section, {})[name] = value


def _first_error(errors) -> Tuple[str, str]:
    for name, messages in errors.items():
        if isinstance(messages, dict):
            return _first_error(messages)
        message = messages[0] if isinstance(messages, list) else messages
        return name, str(message)
    return "non_field_errors", "invalid"


def validate_section(section: str, values: Dict[str, str]):
    """Build the section's config object; errors name ``section.key``."""
    unknown = sorted(set(values) - set(_known_keys(section)))
    if unknown:
        raise ConfigValidationError(f"{section}.{unknown[0]}", "unknown key")
    serializer = SERIALIZERS[section](data=values)
    if not serializer.is_valid():
        name, message = _first_error(serializer.errors)
        if name == "non_field_errors":
            raise ConfigValidationError(section, message)
        raise ConfigValidationError(f"{section}.{name}", message)
    try:
        return serializer.save()
    except serializers.ValidationError as exc:
        name, message = _first_error(exc.detail)
        raise ConfigValidationError(f"{section}.{name}", message)


def parse_grid(values: Dict[str, str], train: Dict[str, str]) -> Dict[str, Tuple[str, ...]]:
    """The ``[ablate]`` section: every listed value must form a valid TrainConfig."""
    unknown = sorted(set(values) - set(_known_keys("ablate")))
    if unknown:
        raise ConfigValidationError(f"ablate.{unknown[0]}", "not a train key")
    grid = {}
    for key, raw in values.items():
        options = tuple(item.strip() for item in raw.split(GRID_SEPARATOR) if item.strip())
        if not options:
            raise ConfigValidationError(f"ablate.{key}", "needs at least one value")
        for option in options:
            serializer = TrainConfigSerializer(data={**train, key: option})
            if not serializer.is_valid():
                _, message = _first_error(serializer.errors)
                raise ConfigValidationError(f"ablate.{key}", f"{option!r}: {message}")
        grid[key] = options
    return grid


def grid_cells(resolved: ResolvedConfig) -> Iterator[Tuple[Dict[str, str], TrainConfig]]:
    """(assignment, TrainConfig) for every point of the ablation grid, in key order."""
    base = train_config_section(resolved.train)
    keys = list(resolved.ablate)
    for values in itertools.product(*(resolved.ablate[key] for key in keys)):
        assignment = dict(zip(keys, values))
        yield assignment, validate_section("train", {**base, **assignment})


def render_config(resolved: ResolvedConfig) -> str:
    """The resolved config as config-file text, sections and keys in a fixed order."""
    parser = _parser()
    parser.read_dict(
        {
            "task": task_config_section(resolved.task),
            "train": train_config_section(resolved.train),
            "eval": eval_config_section(resolved.eval),
            "experiment": experiment_section(resolved.experiment),
            "ablate": {key: f" {GRID_SEPARATOR} ".join(v) for key, v in resolved.ablate.items()},
        }
    )
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def parse_config(
    path: Optional[Path] = None, overrides: Sequence[str] = (), seed: Optional[int] = None
) -> ResolvedConfig:
    """
    Read ``path`` (None means an empty config), apply ``overrides`` and
    ``seed``, and validate every section.
    """
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigParseError(f"cannot read {path}: {exc.strerror}")
    sections = read_sections(text, source=str(path or "<config>"))
    apply_overrides(sections, overrides)
    if seed is not None:
        for name in SEEDED_SECTIONS:
            sections.setdefault(name, {})["seed"] = str(seed)
    train = sections.get("train", {})
    train.setdefault("workers", str(framework_setting("WORKERS")))
    resolved = ResolvedConfig(
        task=validate_section("task", sections.get("task", {})),
        train=validate_section("train", train),
        eval=validate_section("eval", sections.get("eval", {})),
        experiment=validate_section("experiment", sections.get("experiment", {})),
        ablate=parse_grid(sections.get("ablate", {}), train),
    )
    resolved = ResolvedConfig(
        resolved.task,
        resolved.train,
        resolved.eval,
        resolved.experiment,
        resolved.ablate,
        text=render_config(resolved),
    )
    logger.debug(f"Resolved config {resolved.digest[:12]} from {path or 'defaults'}")
    return resolved
