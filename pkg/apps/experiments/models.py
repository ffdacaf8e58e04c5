"""
Experiment specifications and resolved configuration.
"""
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from django.db import models

from apps.baselines.models import BaselineConfig, BaselineMethod
from apps.core.errors import ConfigValidationError
from apps.evaluation.models import EvalConfig
from apps.mdp.models import TaskConfig
from apps.trainer.models import TrainConfig

REPIRL_METHOD = "repirl"
METHOD_CHOICES = [(REPIRL_METHOD, "rePIRL"), *BaselineMethod.choices]
SECTIONS = ("task", "train", "eval", "experiment", "ablate")


class ExperimentCommand(models.TextChoices):
    GEN_DATA = "gen-data", "Generate expert datasets"
    TRAIN = "train", "Train a method"
    EVAL = "eval", "Evaluate a trained policy"
    TTS = "tts", "Test-time scaling curve"
    ABLATE = "ablate", "Flag-grid ablation"
    ORACLE_CHECK = "oracle-check", "Exact oracle invariant suite"


class TrainingMode(models.TextChoices):
    STANDARD = "standard", "Standard"
    TTT = "ttt", "Test-time training with a frozen PRM"
    HARD = "hard", "Prompts the initial policy fails"


@dataclass(frozen=True)
class ExperimentSettings:
    """The ``[experiment]`` config section."""

    method: str = REPIRL_METHOD
    mode: str = TrainingMode.STANDARD
    mcts_k: int = 8
    mcts_exact: Optional[bool] = None
    dpo_beta: float = 1.0
    prm_checkpoint: str = ""
    policy_checkpoint: str = ""
    ablate_seeds: int = 1
    oracle_instances: int = 20
    oracle_sampling_instances: int = 2

    def __post_init__(self):
        if self.method not in dict(METHOD_CHOICES):
            raise ConfigValidationError("experiment.method", f"unknown method {self.method!r}")
        object.__setattr__(self, "mode", TrainingMode(self.mode))

    @property
    def is_baseline(self) -> bool:
        return self.method != REPIRL_METHOD

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(
            method=self.method if self.is_baseline else BaselineMethod.BC,
            mcts_k=self.mcts_k,
            mcts_exact=self.mcts_exact,
            dpo_beta=self.dpo_beta,
        )


@dataclass(frozen=True)
class ResolvedConfig:
    """Every section of an experiment config after defaults, overrides and validation."""

    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    ablate: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    text: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ExperimentSpec:
    """One invocation of the experiment command."""

    command: str
    config_path: Optional[Path] = None
    output_dir: Optional[Path] = None
    seed: Optional[int] = None
    overrides: Tuple[str, ...] = ()
    force: bool = False

    def __post_init__(self):
        object.__setattr__(self, "command", ExperimentCommand(self.command))
        if self.config_path is not None:
            object.__setattr__(self, "config_path", Path(self.config_path))
        if self.output_dir is not None:
            object.__setattr__(self, "output_dir", Path(self.output_dir))
        object.__setattr__(self, "overrides", tuple(self.overrides))
