"""
Serializers for the ``[train]`` section and run summaries.
"""
import math
from dataclasses import asdict

from rest_framework import serializers
from rest_framework.fields import empty

from apps.policies.models import Representation
from apps.trainer.models import AdvantageEstimator, RewardNorm, TrainConfig


class FloatPairField(serializers.Field):
    """Two comma-separated reals, e.g. ``0.2,0.8``."""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item for item in data.replace(" ", "").split(",") if item]
        try:
            low, high = (float(item) for item in data)
        except (TypeError, ValueError):
            raise serializers.ValidationError("expected two comma-separated numbers")
        return low, high

    def to_representation(self, value):
        return ",".join(repr(float(item)) for item in value)


class OptionalFloatField(serializers.FloatField):
    """A float that also accepts ``none``."""

    def run_validation(self, data=empty):
        if isinstance(data, str) and data.strip().lower() in ("none", ""):
            return None
        return super().run_validation(data)


class TrainConfigSerializer(serializers.Serializer):
    """Validates ``[train]`` values and builds a TrainConfig."""

    beta = serializers.FloatField(min_value=1e-9, default=1.0)
    lambda_prm = serializers.FloatField(min_value=0.0, default=0.05)
    outcome_weight = serializers.FloatField(min_value=0.0, default=1.0)
    n_rollouts = serializers.IntegerField(min_value=2, default=4)
    policy_lr = serializers.FloatField(min_value=1e-12, default=5e-7)
    reward_lr = serializers.FloatField(min_value=1e-12, default=3e-8)
    lr_scale = serializers.FloatField(min_value=1e-12, default=1e4)
    clip_ratio = serializers.FloatField(default=0.2)
    entropy_coef = serializers.FloatField(min_value=0.0, default=0.001)
    policy_grad_clip = serializers.FloatField(min_value=1e-12, default=1.0)
    reward_grad_clip = serializers.FloatField(min_value=1e-12, default=10.0)
    adv_estimator = serializers.ChoiceField(
        choices=AdvantageEstimator.choices, default=AdvantageEstimator.RLOO
    )
    promote_correct = serializers.BooleanField(default=True)
    use_importance_weights = serializers.BooleanField(default=True)
    accuracy_filter = FloatPairField(default=(0.2, 0.8))
    filter_prompts = serializers.BooleanField(default=False)
    format_reward = serializers.BooleanField(default=False)
    weight_log_clip = serializers.FloatField(min_value=0.0, default=20.0)
    loss_reward_norm = serializers.ChoiceField(choices=RewardNorm.choices, default=RewardNorm.MEAN)
    freeze_reward = serializers.BooleanField(default=False)
    policy_epochs = serializers.IntegerField(min_value=1, default=1)
    epochs = serializers.IntegerField(min_value=0, default=2)
    batch_size = serializers.IntegerField(min_value=1, default=8)
    pseudo_expert_factor = serializers.IntegerField(min_value=1, default=4)
    context_order = serializers.IntegerField(min_value=0, default=3)
    reward_context_order = serializers.IntegerField(min_value=0, required=False, allow_null=True)
    policy_repr = serializers.ChoiceField(
        choices=Representation.choices, default=Representation.TABULAR
    )
    reward_repr = serializers.ChoiceField(
        choices=Representation.choices, default=Representation.TABULAR
    )
    table_size = serializers.IntegerField(min_value=1, default=4096)
    reward_table_size = serializers.IntegerField(min_value=1, default=4096)
    value_clip = OptionalFloatField(min_value=1e-9, default=10.0, allow_null=True)
    shared_featurization = serializers.BooleanField(default=False)
    workers = serializers.IntegerField(min_value=1, default=1)
    log_interval = serializers.IntegerField(min_value=0, default=10)
    eval_interval = serializers.IntegerField(min_value=0, default=1)
    checkpoint_interval = serializers.IntegerField(min_value=0, default=0)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate_clip_ratio(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("must lie in (0, 1)")
        return value

    def validate_accuracy_filter(self, value):
        low, high = value
        if not 0.0 <= low < high <= 1.0:
            raise serializers.ValidationError("need 0 <= low < high <= 1")
        return value

    def create(self, validated_data):
        return TrainConfig(**validated_data)


def train_config_section(config: TrainConfig) -> dict:
    """The ``[train]`` section as strings, ready for a config file."""
    section = {}
    for key, value in asdict(config).items():
        if value is None:
            if key == "reward_context_order":
                continue
            section[key] = "none"
        elif isinstance(value, bool):
            section[key] = str(value).lower()
        elif isinstance(value, tuple):
            section[key] = ",".join(repr(float(item)) for item in value)
        elif isinstance(value, float):
            section[key] = repr(value)
        else:
            section[key] = str(value)
    return section


def _finite(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else value


class RunSummarySerializer(serializers.Serializer):
    """JSON run summary written next to the metrics CSV."""

    method = serializers.CharField()
    iterations = serializers.IntegerField()
    final_pass_at_1 = serializers.FloatField(allow_null=True)
    final_outcome_mean = serializers.FloatField(allow_null=True)
    reward_updates = serializers.IntegerField()
    lr_scale = serializers.FloatField()
    seed = serializers.IntegerField()
    config = serializers.DictField()

    @classmethod
    def from_run(cls, method, cfg: TrainConfig, metrics):
        last = metrics.last()
        return cls(
            {
                "method": method,
                "iterations": len(metrics),
                "final_pass_at_1": _finite(metrics.final_pass_at_1()),
                "final_outcome_mean": _finite(last.outcome_mean) if last else None,
                "reward_updates": sum(1 for r in metrics if not r.reward_skipped),
                "lr_scale": cfg.lr_scale,
                "seed": cfg.seed,
                "config": train_config_section(cfg),
            }
        )
