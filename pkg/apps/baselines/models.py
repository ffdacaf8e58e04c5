"""
Domain types of the baseline methods.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Hashable, Optional

import numpy as np
from django.db import models

from apps.core.errors import ConfigValidationError
from apps.mdp.models import State, Trajectory
from apps.policies.models import TableGradient


class BaselineMethod(models.TextChoices):
    BC = "bc", "Behavioral cloning"
    DPO = "dpo", "Direct preference optimization"
    PRIME = "prime", "Implicit PRM without importance weights"
    MCTS_PRM = "mcts_prm", "Completion-labelled PRM (Math-Shepherd)"
    DQO = "dqo", "Soft actor-critic on token rewards"
    RLOO = "rloo", "Outcome-only RLOO"
    GAN_IRL = "gan_irl", "Discriminator form of the reward objective"


@dataclass(frozen=True)
class BaselineConfig:
    """Method-specific knobs; everything else comes from TrainConfig."""

    method: str = BaselineMethod.BC
    mcts_k: int = 8
    mcts_exact: Optional[bool] = None
    dpo_beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "method", BaselineMethod(self.method))
        if self.mcts_k < 1:
            raise ConfigValidationError("experiment.mcts_k", "must be at least 1")
        if self.dpo_beta <= 0:
            raise ConfigValidationError("experiment.dpo_beta", "must be positive")


@dataclass(frozen=True)
class PreferencePair:
    """A chosen and a rejected trajectory for the same prompt."""

    prompt_id: int
    chosen: Trajectory
    rejected: Trajectory

    def __post_init__(self):
        if self.chosen.prompt_id != self.prompt_id or self.rejected.prompt_id != self.prompt_id:
            raise ValueError("chosen and rejected must belong to the pair's prompt")


@dataclass(frozen=True)
class Transition:
    """One annotated step (s_t, a_t, r_t, s_t+1)."""

    state: State
    action: int
    reward: Optional[float]
    next_state: State
    terminal: bool


@dataclass
class Objective:
    """A scalar loss and its gradient over a parameter table."""

    loss: float
    gradient: TableGradient


class SoftCritics:
    """
    Tabular V and Q critics.

    With ``context_order`` None each state is its own entry; otherwise states
    sharing the last ``context_order`` tokens share entries, as in the policy.
    """

    def __init__(self, vocab_size: int, context_order: Optional[int] = None):
        self.vocab_size = vocab_size
        self.context_order = context_order
        self.v_table: Dict[Hashable, float] = {}
        self.q_table: Dict[Hashable, np.ndarray] = {}

    def key(self, state: State) -> Hashable:
        if self.context_order is None:
            return (state.prompt_id, state.prompt, state.prefix)
        return state.context(self.context_order)

    def value(self, state: State) -> float:
        return self.v_table.get(self.key(state), 0.0)

    def q_row(self, state: State) -> np.ndarray:
        row = self.q_table.get(self.key(state))
        return np.zeros(self.vocab_size) if row is None else row.copy()

    def set_value(self, state: State, value: float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite critic value {value}")
        self.v_table[self.key(state)] = float(value)

    def set_q(self, state: State, row):
        row = np.array(row, dtype=float)
        if row.shape != (self.vocab_size,) or not np.isfinite(row).all():
            raise ValueError("critic rows must be finite and span the vocabulary")
        self.q_table[self.key(state)] = row

    def apply_value_gradient(self, gradient: Dict[Hashable, float], step: float):
        for key, value in gradient.items():
            self.v_table[key] = self.v_table.get(key, 0.0) + step * value

    @classmethod
    def from_solution(cls, solution, vocab_size: int) -> "SoftCritics":
        """Critics holding an exact soft solution's V* and Q*."""
        critics = cls(vocab_size)
        for state, value in solution.v_values.items():
            critics.set_value(state, value)
            critics.set_q(state, solution.q_values[state])
        return critics


@dataclass
class MixtureSample:
    """A trajectory drawn from the soft-opt/policy mixture with its log density."""

    traj: Trajectory
    log_density: float
    weight: Optional[float] = field(default=None)
