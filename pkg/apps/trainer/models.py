"""
Training configuration, batch splits and per-iteration metrics.
"""
import math
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple

from django.db import models

from apps.core.errors import ConfigValidationError
from apps.mdp.models import Trajectory
from apps.policies.models import Representation


class AdvantageEstimator(models.TextChoices):
    RLOO = "rloo", "Leave-one-out baseline"
    GRPO = "grpo", "Group-normalized"


class RewardNorm(models.TextChoices):
    MEAN = "mean", "Per-token mean"
    SUM = "sum", "Trajectory sum"


@dataclass(frozen=True)
class TrainConfig:
    """All tunables of the dual reward/policy loop."""

    beta: float = 1.0
    lambda_prm: float = 0.05
    outcome_weight: float = 1.0
    n_rollouts: int = 4
    policy_lr: float = 5e-7
    reward_lr: float = 3e-8
    lr_scale: float = 1e4
    clip_ratio: float = 0.2
    entropy_coef: float = 0.001
    policy_grad_clip: float = 1.0
    reward_grad_clip: float = 10.0
    adv_estimator: str = AdvantageEstimator.RLOO
    promote_correct: bool = True
    use_importance_weights: bool = True
    accuracy_filter: Tuple[float, float] = (0.2, 0.8)
    filter_prompts: bool = False
    format_reward: bool = False
    weight_log_clip: float = 20.0
    loss_reward_norm: str = RewardNorm.MEAN
    freeze_reward: bool = False
    policy_epochs: int = 1
    epochs: int = 2
    batch_size: int = 8
    pseudo_expert_factor: int = 4
    context_order: int = 3
    reward_context_order: Optional[int] = None
    policy_repr: str = Representation.TABULAR
    reward_repr: str = Representation.TABULAR
    table_size: int = 4096
    reward_table_size: int = 4096
    value_clip: Optional[float] = 10.0
    shared_featurization: bool = False
    workers: int = 1
    log_interval: int = 10
    eval_interval: int = 1
    checkpoint_interval: int = 0
    seed: int = 0

    def __post_init__(self):
        low, high = self.accuracy_filter
        if not 0.0 <= low < high <= 1.0:
            raise ConfigValidationError(
                "train.accuracy_filter", f"need 0 <= low < high <= 1, got ({low}, {high})"
            )
        if not 0.0 < self.clip_ratio < 1.0:
            raise ConfigValidationError("train.clip_ratio", "must lie in (0, 1)")
        if self.beta <= 0:
            raise ConfigValidationError("train.beta", "must be positive")
        object.__setattr__(self, "accuracy_filter", (float(low), float(high)))
        object.__setattr__(self, "adv_estimator", AdvantageEstimator(self.adv_estimator))
        object.__setattr__(self, "loss_reward_norm", RewardNorm(self.loss_reward_norm))
        object.__setattr__(self, "policy_repr", Representation(self.policy_repr))
        object.__setattr__(self, "reward_repr", Representation(self.reward_repr))

    @property
    def policy_step(self) -> float:
        return self.policy_lr * self.lr_scale

    @property
    def reward_step(self) -> float:
        return self.reward_lr * self.lr_scale

    def reward_shape(self) -> Tuple[int, str, int]:
        """(context_order, representation, table_size) of the reward table."""
        if self.shared_featurization:
            return self.context_order, self.policy_repr, self.table_size
        order = self.reward_context_order
        if order is None:
            order = self.context_order
        return order, self.reward_repr, self.reward_table_size

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass
class BatchSplit:
    """Failed policy rollouts versus the expert side of one batch."""

    policy_failed: List[Trajectory] = field(default_factory=list)
    expert_pool: List[Trajectory] = field(default_factory=list)
    promoted: List[Trajectory] = field(default_factory=list)
    rollouts: List[Trajectory] = field(default_factory=list)


@dataclass
class IterationRecord:
    iteration: int
    epoch: int
    outcome_mean: float = math.nan
    prm_expert_mean: float = math.nan
    prm_policy_mean: float = math.nan
    prm_loss: float = math.nan
    surrogate: float = math.nan
    policy_loss: float = math.nan
    entropy: float = math.nan
    ess: float = math.nan
    reward_grad_norm: float = math.nan
    policy_grad_norm: float = math.nan
    n_failed: int = 0
    n_promoted: int = 0
    n_filtered: int = 0
    reward_skipped: bool = False
    pass_at_1: float = math.nan
    lr_scale: float = 1.0

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass
class RunMetrics:
    """One record per iteration, in order."""

    records: List[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def last(self) -> Optional[IterationRecord]:
        return self.records[-1] if self.records else None

    def final_pass_at_1(self) -> float:
        for record in reversed(self.records):
            if not math.isnan(record.pass_at_1):
                return record.pass_at_1
        return math.nan
