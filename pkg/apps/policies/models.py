"""
Policy and process-reward parameterizations.

Both are tables of per-context rows over the vocabulary. The context of a
state is the last ``context_order`` tokens of prompt + prefix. The tabular
representation keys rows by that context; the linear representation
one-hot encodes (hash(context) mod table_size, action), so its weight
vector is a dense table with ``table_size`` rows.
"""
import copy
import hashlib
import logging
from typing import Dict, Hashable, Optional, Protocol, Tuple

import numpy as np
from django.db import models
from scipy.special import log_softmax, softmax

from apps.mdp.models import State

logger = logging.getLogger(__name__)


class Representation(models.TextChoices):
    TABULAR = "tabular", "Tabular"
    LINEAR = "linear", "Linear (hashed one-hot features)"


def context_bucket(context: Tuple[int, ...], table_size: int) -> int:
    """Stable hash of a context into [0, table_size)."""
    text = ".".join(str(t) for t in context).encode("ascii")
    digest = hashlib.blake2b(text, digest_size=8).digest()
    return int.from_bytes(digest, "big") % table_size


class TableGradient:
    """Sparse per-row gradient with insertion-ordered keys."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.rows: Dict[Hashable, np.ndarray] = {}

    def add(self, key, values, scale: float = 1.0):
        row = self.rows.get(key)
        if row is None:
            row = self.rows[key] = np.zeros(self.vocab_size)
        row += scale * np.asarray(values, dtype=float)

    def add_entry(self, key, action: int, value: float):
        row = self.rows.get(key)
        if row is None:
            row = self.rows[key] = np.zeros(self.vocab_size)
        row[action] += value

    def merge(self, other: "TableGradient", scale: float = 1.0) -> "TableGradient":
        for key, row in other.rows.items():
            self.add(key, row, scale)
        return self

    def scaled(self, factor: float) -> "TableGradient":
        result = TableGradient(self.vocab_size)
        for key, row in self.rows.items():
            result.rows[key] = row * factor
        return result

    def get(self, key, action: Optional[int] = None):
        row = self.rows.get(key)
        if row is None:
            row = np.zeros(self.vocab_size)
        return float(row[action]) if action is not None else row.copy()

    def norm(self) -> float:
        return float(np.sqrt(sum(float(row @ row) for row in self.rows.values())))

    def clip_by_norm(self, max_norm: Optional[float]) -> Tuple["TableGradient", float]:
        """Return the gradient rescaled to at most ``max_norm`` and its original norm."""
        total = self.norm()
        if max_norm is None or max_norm <= 0 or total <= max_norm:
            return self, total
        return self.scaled(max_norm / total), total

    def to_vector(self, keys) -> np.ndarray:
        return np.concatenate([self.get(key) for key in keys]) if keys else np.zeros(0)

    def __len__(self):
        return len(self.rows)


class TokenTable:
    """Rows of ``vocab_size`` reals keyed by context window."""

    kind = "table"

    def __init__(
        self,
        vocab_size: int,
        context_order: int = 3,
        representation: str = Representation.TABULAR,
        table_size: int = 4096,
    ):
        if vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if context_order < 0:
            raise ValueError("context_order must be non-negative")
        self.vocab_size = vocab_size
        self.context_order = context_order
        self.representation = Representation(representation)
        self.table_size = table_size
        self.rows: Dict[Hashable, np.ndarray] = {}

    def key(self, state: State) -> Hashable:
        context = state.context(self.context_order)
        if self.representation == Representation.LINEAR:
            return context_bucket(context, self.table_size)
        return context

    def row(self, state: State) -> np.ndarray:
        """A copy of the parameter row for ``state`` (zeros when unset)."""
        row = self.rows.get(self.key(state))
        if row is None:
            return np.zeros(self.vocab_size)
        return row.copy()

    def set(self, state: State, action: int, value: float):
        self._writable_row(self.key(state))[action] = value

    def _writable_row(self, key) -> np.ndarray:
        row = self.rows.get(key)
        if row is None:
            row = self.rows[key] = np.zeros(self.vocab_size)
        return row

    def apply_gradient(self, gradient: TableGradient, step: float):
        """rows += step * gradient."""
        for key, values in gradient.rows.items():
            self._writable_row(key)[:] += step * values

    def features(self, state: State, action: int):
        """Active (index, value) pairs of the one-hot (context, action) features."""
        key = self.key(state)
        if self.representation == Representation.LINEAR:
            return [(key * self.vocab_size + int(action), 1.0)]
        return [((key, int(action)), 1.0)]

    def weight_vector(self) -> np.ndarray:
        """Dense weights of the linear representation."""
        weights = np.zeros(self.table_size * self.vocab_size)
        for key, row in self.rows.items():
            weights[key * self.vocab_size : (key + 1) * self.vocab_size] = row
        return weights

    def copy(self):
        return copy.deepcopy(self)

    def compatible_with(self, other: "TokenTable") -> bool:
        if self.representation == Representation.LINEAR and self.table_size != other.table_size:
            return False
        return (
            self.vocab_size == other.vocab_size
            and self.context_order == other.context_order
            and self.representation == other.representation
        )

    def __repr__(self):
        return (
            f"{type(self).__name__}(V={self.vocab_size}, k={self.context_order}, "
            f"{self.representation}, rows={len(self.rows)})"
        )


class PolicyParams(TokenTable):
    """pi_theta(a | s) = softmax(logits[context(s)])."""

    kind = "policy"

    def logits(self, state: State) -> np.ndarray:
        return self.row(state)

    def distribution(self, state: State, temperature: float = 1.0) -> np.ndarray:
        return softmax(self.logits(state) / temperature)

    def log_distribution(self, state: State, temperature: float = 1.0) -> np.ndarray:
        return log_softmax(self.logits(state) / temperature)

    def freeze(self) -> "FrozenPolicy":
        return FrozenPolicy(self)


class FrozenPolicy(PolicyParams):
    """Read-only snapshot of a policy, used as pi_ref and pi_old."""

    def __init__(self, policy: PolicyParams):
        super().__init__(
            policy.vocab_size,
            policy.context_order,
            policy.representation,
            policy.table_size,
        )
        for key, row in policy.rows.items():
            frozen = row.copy()
            frozen.flags.writeable = False
            self.rows[key] = frozen
        self._sealed = True

    def __setattr__(self, name, value):
        if getattr(self, "_sealed", False):
            raise AttributeError("frozen policy is immutable")
        super().__setattr__(name, value)

    def _writable_row(self, key):
        raise TypeError("frozen policy is immutable")

    def thaw(self) -> PolicyParams:
        policy = PolicyParams(
            self.vocab_size, self.context_order, self.representation, self.table_size
        )
        policy.rows = {key: row.copy() for key, row in self.rows.items()}
        return policy

    def copy(self):
        return self


class RewardParams(TokenTable):
    """r_phi(s, a) = params[context(s)][a], held within [-value_clip, value_clip]."""

    kind = "reward"

    def __init__(self, *args, value_clip: Optional[float] = 10.0, **kwargs):
        super().__init__(*args, **kwargs)
        self.value_clip = value_clip

    def scores(self, state: State) -> np.ndarray:
        values = self.row(state)
        if self.value_clip is not None:
            np.clip(values, -self.value_clip, self.value_clip, out=values)
        return values

    def score(self, state: State, action: int) -> float:
        return float(self.scores(state)[action])

    def apply_gradient(self, gradient: TableGradient, step: float):
        """Gradient step followed by projection onto the clip box."""
        super().apply_gradient(gradient, step)
        if self.value_clip is not None:
            for key in gradient.rows:
                np.clip(self.rows[key], -self.value_clip, self.value_clip, out=self.rows[key])


class StepScorer(Protocol):
    """Anything that scores a (state, action) step."""

    def score(self, state: State, action: int) -> float:
        ...
