"""
Result types of the exact oracles.
"""
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from apps.mdp.models import State, Trajectory


@dataclass
class SoftSolution:
    """Soft Q*, V* and pi* over every non-terminal reachable state."""

    beta: float
    q_values: Dict[State, np.ndarray] = field(default_factory=dict)
    v_values: Dict[State, float] = field(default_factory=dict)
    policy: Dict[State, np.ndarray] = field(default_factory=dict)

    def probabilities(self, state: State) -> np.ndarray:
        return self.policy[state]

    def log_prob(self, traj: Trajectory) -> float:
        """sum_t log pi*(a_t | s_t)."""
        return float(
            sum(np.log(self.policy[state][action]) for state, action in traj.steps())
        )

    def __len__(self):
        return len(self.v_values)


@dataclass
class OccupancyMessages:
    """
    Log-domain forward/backward messages of the energy model.

    ``occupancy`` holds the probability of visiting (s, a); ``marginals`` is
    the same quantity normalized over the pairs of each (prompt, step).
    """

    log_forward: Dict[State, float] = field(default_factory=dict)
    log_backward: Dict[State, float] = field(default_factory=dict)
    occupancy: Dict[State, np.ndarray] = field(default_factory=dict)
    marginals: Dict[State, np.ndarray] = field(default_factory=dict)
    log_z: Dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PartitionValue:
    """log z(phi); ``per_prompt`` holds the conditional partition of each prompt."""

    log_z: float
    per_prompt: Dict[int, float] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class CheckResult:
    name: str
    instance: int
    passed: bool
    max_error: float
    tolerance: float
    detail: str = ""
