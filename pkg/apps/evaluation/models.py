"""
Evaluation configuration and report types.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from django.db import models

from apps.core.errors import ConfigValidationError


class Selector(models.TextChoices):
    BEST_OF_N = "best_of_n", "Best-of-n by mean PRM reward"
    MAJORITY = "majority", "Majority vote"


class ScorerKind(models.TextChoices):
    LEARNED = "learned", "Learned PRM"
    HIDDEN = "hidden", "Hidden task reward"


@dataclass(frozen=True)
class EvalConfig:
    """The ``[eval]`` config section."""

    greedy: bool = True
    n_grid: Tuple[int, ...] = (1, 4, 16)
    tts_seeds: int = 20
    temperature: float = 0.8
    auc_negatives: int = 4
    scorer: str = ScorerKind.LEARNED
    seed: int = 0

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(n < 1 for n in grid):
            raise ConfigValidationError("eval.n_grid", "needs positive sample counts")
        object.__setattr__(self, "n_grid", tuple(sorted(set(grid))))
        object.__setattr__(self, "scorer", ScorerKind(self.scorer))


@dataclass(frozen=True)
class TtsPoint:
    n: int
    selector: str
    mean: float
    stderr: float


@dataclass
class EvalReport:
    per_prompt_pass: Dict[int, float] = field(default_factory=dict)
    pass_at_1: float = 0.0
    prm_auc: Optional[float] = None
    tts: List[TtsPoint] = field(default_factory=list)

    def curve(self, selector: str) -> Dict[int, float]:
        return {point.n: point.mean for point in self.tts if point.selector == selector}
