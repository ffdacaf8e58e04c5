"""
Domain types for token-level MDPs.

A prompt is a fixed token sequence; a state is the prompt plus the tokens
generated so far; an action is the next token. Transitions append the
action, so dynamics are deterministic.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Tuple

from django.db import models

from apps.core.errors import InvalidActionError, UnknownPromptError

Tokens = Tuple[int, ...]


class TaskKind(models.TextChoices):
    """Synthetic reasoning tasks with verifiable outcomes."""

    PARITY_CHAIN = "parity_chain", "Parity chain"
    ARITHMETIC_CHAIN = "arithmetic_chain", "Arithmetic chain"
    COPY_SORT = "copy_sort", "Copy sort"
    SYNTHETIC = "synthetic", "Synthetic (no verifier)"


class TrajectorySource(models.TextChoices):
    """Where a trajectory came from."""

    EXPERT = "expert", "Expert"
    POLICY = "policy", "Policy"
    PROMOTED = "promoted", "Promoted"


@dataclass(frozen=True)
class Prompt:
    id: int
    tokens: Tokens = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))


@dataclass(frozen=True)
class State:
    """s_t = [x, y_0, ..., y_{t-1}]."""

    prompt_id: int
    prefix: Tokens = ()
    prompt: Tokens = ()

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(int(t) for t in self.prefix))
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))

    @property
    def t(self) -> int:
        return len(self.prefix)

    def context(self, order: int) -> Tokens:
        """Last ``order`` tokens of prompt + prefix."""
        if order <= 0:
            return ()
        tokens = self.prompt + self.prefix
        return tokens[-order:]

    def child(self, action: int) -> "State":
        return State(self.prompt_id, self.prefix + (int(action),), self.prompt)


@dataclass(frozen=True)
class Trajectory:
    """A prompt id, the generated tokens and bookkeeping for learners."""

    prompt_id: int
    actions: Tokens
    behavior_logprobs: Optional[Tuple[float, ...]] = None
    outcome: Optional[float] = None
    source: str = TrajectorySource.POLICY
    prompt: Tokens = ()

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        if self.behavior_logprobs is not None:
            logprobs = tuple(float(v) for v in self.behavior_logprobs)
            if len(logprobs) != len(self.actions):
                raise ValueError(
                    f"{len(logprobs)} behavior log-probabilities for "
                    f"{len(self.actions)} actions"
                )
            if any(v > 0.0 for v in logprobs):
                raise ValueError("behavior log-probabilities must be <= 0")
            object.__setattr__(self, "behavior_logprobs", logprobs)
        object.__setattr__(self, "source", TrajectorySource(self.source))

    def __len__(self):
        return len(self.actions)

    def states(self):
        """The states visited before each action, in order."""
        prefix = ()
        visited = []
        for action in self.actions:
            visited.append(State(self.prompt_id, prefix, self.prompt))
            prefix = prefix + (action,)
        return visited

    def steps(self):
        """(state, action) pairs in order."""
        return list(zip(self.states(), self.actions))

    def with_outcome(self, outcome: float) -> "Trajectory":
        return Trajectory(
            self.prompt_id,
            self.actions,
            self.behavior_logprobs,
            float(outcome),
            self.source,
            self.prompt,
        )

    def with_source(self, source: str) -> "Trajectory":
        return Trajectory(
            self.prompt_id,
            self.actions,
            self.behavior_logprobs,
            self.outcome,
            source,
            self.prompt,
        )


HiddenReward = Callable[[State, int], float]


@dataclass(frozen=True)
class TokenMdp:
    """M = {S, A, T, R} with deterministic append transitions and gamma = 1."""

    vocab_size: int
    horizon: int
    eos: Optional[int]
    prompts: Tuple[Prompt, ...]
    task_kind: str = TaskKind.SYNTHETIC
    hidden_reward: Optional[HiddenReward] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.eos is not None and not 0 <= self.eos < self.vocab_size:
            raise InvalidActionError(f"eos {self.eos} outside vocabulary")
        seen = set()
        for prompt in self.prompts:
            if prompt.id in seen:
                raise ValueError(f"duplicate prompt id {prompt.id}")
            seen.add(prompt.id)
            if any(not 0 <= t < self.vocab_size for t in prompt.tokens):
                raise InvalidActionError(f"prompt {prompt.id} has out-of-vocabulary tokens")

    @cached_property
    def task(self):
        from apps.mdp.tasks import task_for

        return task_for(self.task_kind, self.vocab_size)

    @cached_property
    def _prompt_index(self):
        return {prompt.id: prompt for prompt in self.prompts}

    def prompt(self, prompt_id: int) -> Prompt:
        try:
            return self._prompt_index[prompt_id]
        except KeyError:
            raise UnknownPromptError(f"unknown prompt id {prompt_id}") from None

    def root(self, prompt: Prompt) -> State:
        return State(prompt.id, (), prompt.tokens)

    def is_terminal_prefix(self, prefix: Tokens) -> bool:
        """True when the prefix ended at eos or reached the horizon."""
        if len(prefix) >= self.horizon:
            return True
        return bool(prefix) and self.eos is not None and prefix[-1] == self.eos

    def output(self, actions: Tokens) -> Tokens:
        """The generated tokens before eos."""
        if self.eos is not None and self.eos in actions:
            return tuple(actions[: actions.index(self.eos)])
        return tuple(actions)

    def attach(self, traj: Trajectory) -> Trajectory:
        """Return ``traj`` carrying its prompt tokens."""
        tokens = self.prompt(traj.prompt_id).tokens
        if traj.prompt == tokens:
            return traj
        return Trajectory(
            traj.prompt_id,
            traj.actions,
            traj.behavior_logprobs,
            traj.outcome,
            traj.source,
            tokens,
        )


@dataclass(frozen=True)
class TaskConfig:
    """The ``[task]`` config section."""

    task_kind: str = TaskKind.PARITY_CHAIN
    vocab_size: int = 6
    horizon: int = 8
    prompt_length: int = 6
    min_prompt_length: int = 0
    num_prompts: int = 0
    experts_per_prompt: int = 4
    heldout_fraction: float = 0.0
    hidden_reward: bool = True
    synthetic_eos: bool = True
    seed: int = 0
