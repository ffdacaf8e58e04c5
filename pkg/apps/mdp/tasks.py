"""
Synthetic reasoning tasks with verifiable outcomes.

Each task knows its token layout, a procedural expert, an outcome verifier
and the hidden per-step reward used only by generators and evaluation.
"""
import itertools
import logging
from typing import Optional, Sequence, Tuple

from apps.core.errors import ConfigurationError, ConfigValidationError
from apps.mdp.models import State, TaskKind, Tokens

logger = logging.getLogger(__name__)

EOS = 0


class Task:
    """Base class for task implementations."""

    kind = TaskKind.SYNTHETIC
    answer_marker: Optional[int] = None
    has_verifier = True

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def prompt_alphabet(self) -> Tokens:
        raise NotImplementedError

    def min_horizon(self, prompt_length: int) -> int:
        return 1

    def expert_output(self, prompt: Tokens, horizon: int, rng) -> Tokens:
        raise NotImplementedError

    def verify(self, prompt: Tokens, output: Tokens) -> float:
        raise NotImplementedError

    def answer(self, output: Tokens) -> Tokens:
        return tuple(output)

    def well_formed(self, prompt: Tokens, actions: Tokens, output: Tokens) -> bool:
        return True

    def hidden_reward(self, state: State, action: int) -> float:
        raise NotImplementedError

    def prompt_universe(self, min_length: int, max_length: int):
        """Every prompt of length min_length..max_length, in a fixed order."""
        alphabet = self.prompt_alphabet()
        for length in range(min_length, max_length + 1):
            yield from itertools.product(alphabet, repeat=length)

    def universe_size(self, min_length: int, max_length: int) -> int:
        width = len(self.prompt_alphabet())
        return sum(width**length for length in range(min_length, max_length + 1))


class ChainTask(Task):
    """
    Running modular sum over a digit prompt.

    Token layout for base B: 0 = eos, digits 1..B, running-value tokens
    B+1..2B, answer marker 2B+1. Remaining ids are distractors.
    """

    kind = TaskKind.ARITHMETIC_CHAIN

    def __init__(self, vocab_size: int, base: Optional[int] = None):
        super().__init__(vocab_size)
        self.base = base if base is not None else (vocab_size - 2) // 2
        if self.base < 2 or vocab_size < 2 * self.base + 2:
            raise ConfigValidationError(
                "task.vocab_size",
                f"{self.kind} needs vocab_size >= {2 * max(self.base, 2) + 2}",
            )
        self.answer_marker = 2 * self.base + 1

    def digit_token(self, value: int) -> int:
        return 1 + value

    def value_token(self, value: int) -> int:
        return self.base + 1 + value

    def encode_prompt(self, digits: Sequence[int]) -> Tokens:
        return tuple(self.digit_token(d % self.base) for d in digits)

    def decode_prompt(self, prompt: Tokens) -> Tuple[int, ...]:
        return tuple(t - 1 for t in prompt)

    def running_values(self, prompt: Tokens) -> Tuple[int, ...]:
        values = []
        total = 0
        for digit in self.decode_prompt(prompt):
            total = (total + digit) % self.base
            values.append(total)
        return tuple(values)

    def final_value(self, prompt: Tokens) -> int:
        values = self.running_values(prompt)
        return values[-1] if values else 0

    def prompt_alphabet(self) -> Tokens:
        return tuple(self.digit_token(d) for d in range(self.base))

    def min_horizon(self, prompt_length: int) -> int:
        return prompt_length + 2

    def expert_output(self, prompt: Tokens, horizon: int, rng) -> Tokens:
        steps = [self.value_token(v) for v in self.running_values(prompt)]
        answer = self.value_token(self.final_value(prompt))
        slack = horizon - (len(steps) + 2)
        if slack < 0:
            raise ConfigurationError(
                f"horizon {horizon} too short for prompt of length {len(prompt)}"
            )
        if slack >= 1 and rng.random() < 0.5:
            steps.append(answer)
        return tuple(steps) + (self.answer_marker, answer)

    def answer(self, output: Tokens) -> Tokens:
        if self.answer_marker not in output:
            return ()
        return tuple(output[output.index(self.answer_marker) + 1 :])

    def verify(self, prompt: Tokens, output: Tokens) -> float:
        if self.answer_marker not in output:
            return 0.0
        expected = (self.value_token(self.final_value(prompt)),)
        return 1.0 if self.answer(output) == expected else 0.0

    def well_formed(self, prompt: Tokens, actions: Tokens, output: Tokens) -> bool:
        return self.answer_marker in output

    def hidden_reward(self, state: State, action: int) -> float:
        values = self.running_values(state.prompt)
        final = self.value_token(self.final_value(state.prompt))
        prefix = state.prefix
        if self.answer_marker in prefix:
            after = prefix[prefix.index(self.answer_marker) + 1 :]
            if not after:
                return 2.0 if action == final else -1.0
            return 0.0 if action == EOS else -1.0
        t = len(prefix)
        if t < len(values):
            return 1.0 if action == self.value_token(values[t]) else -1.0
        if action in (self.answer_marker, final):
            return 0.0
        return -1.0


class ParityChainTask(ChainTask):
    """Running parity; the base-2 chain."""

    kind = TaskKind.PARITY_CHAIN

    def __init__(self, vocab_size: int):
        super().__init__(vocab_size, base=2)


class CopySortTask(Task):
    """Emit the prompt symbols in ascending order, then eos."""

    kind = TaskKind.COPY_SORT

    def __init__(self, vocab_size: int):
        super().__init__(vocab_size)
        if vocab_size < 2:
            raise ConfigValidationError("task.vocab_size", "copy_sort needs vocab_size >= 2")

    def prompt_alphabet(self) -> Tokens:
        return tuple(range(1, self.vocab_size))

    def min_horizon(self, prompt_length: int) -> int:
        return max(prompt_length, 1)

    def expert_output(self, prompt: Tokens, horizon: int, rng) -> Tokens:
        if horizon < len(prompt):
            raise ConfigurationError(
                f"horizon {horizon} too short for prompt of length {len(prompt)}"
            )
        return tuple(sorted(prompt))

    def verify(self, prompt: Tokens, output: Tokens) -> float:
        return 1.0 if tuple(output) == tuple(sorted(prompt)) else 0.0

    def well_formed(self, prompt: Tokens, actions: Tokens, output: Tokens) -> bool:
        return len(output) == len(prompt)

    def hidden_reward(self, state: State, action: int) -> float:
        target = tuple(sorted(state.prompt))
        t = len(state.prefix)
        if t >= len(target):
            return 0.0 if action == EOS else -1.0
        reward = 1.0 if action == target[t] else -1.0
        if t == len(target) - 1 and state.prefix + (action,) == target:
            reward += 2.0
        return reward


class SyntheticTask(Task):
    """Unverified sequences over the full vocabulary."""

    kind = TaskKind.SYNTHETIC
    has_verifier = False

    def prompt_alphabet(self) -> Tokens:
        return tuple(range(self.vocab_size))

    def expert_output(self, prompt: Tokens, horizon: int, rng) -> Tokens:
        raise ConfigurationError("synthetic tasks have no expert")

    def verify(self, prompt: Tokens, output: Tokens) -> float:
        return 0.0


TASKS = {
    TaskKind.PARITY_CHAIN: ParityChainTask,
    TaskKind.ARITHMETIC_CHAIN: ChainTask,
    TaskKind.COPY_SORT: CopySortTask,
    TaskKind.SYNTHETIC: SyntheticTask,
}


def task_for(task_kind: str, vocab_size: int) -> Task:
    try:
        task_class = TASKS[TaskKind(task_kind)]
    except ValueError:
        raise ConfigValidationError("task.task_kind", f"unknown task kind {task_kind!r}")
    return task_class(vocab_size)
