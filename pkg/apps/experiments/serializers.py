"""
Serializers for the ``[experiment]`` section.
"""
from dataclasses import asdict

from rest_framework import serializers
from rest_framework.fields import empty

from apps.experiments.models import METHOD_CHOICES, REPIRL_METHOD, ExperimentSettings, TrainingMode


class OptionalBooleanField(serializers.BooleanField):
    """A boolean that also accepts ``none``."""

    def run_validation(self, data=empty):
        if isinstance(data, str) and data.strip().lower() in ("none", ""):
            return None
        return super().run_validation(data)


class ExperimentSettingsSerializer(serializers.Serializer):
    """Validates ``[experiment]`` values and builds ExperimentSettings."""

    method = serializers.ChoiceField(choices=METHOD_CHOICES, default=REPIRL_METHOD)
    mode = serializers.ChoiceField(choices=TrainingMode.choices, default=TrainingMode.STANDARD)
    mcts_k = serializers.IntegerField(min_value=1, default=8)
    mcts_exact = OptionalBooleanField(default=None, allow_null=True)
    dpo_beta = serializers.FloatField(min_value=1e-9, default=1.0)
    prm_checkpoint = serializers.CharField(allow_blank=True, default="")
    policy_checkpoint = serializers.CharField(allow_blank=True, default="")
    ablate_seeds = serializers.IntegerField(min_value=1, default=1)
    oracle_instances = serializers.IntegerField(min_value=1, default=20)
    oracle_sampling_instances = serializers.IntegerField(min_value=0, default=2)

    def validate(self, attrs):
        if attrs.get("mode") == TrainingMode.TTT and attrs.get("method", REPIRL_METHOD) not in (
            REPIRL_METHOD,
            "rloo",
        ):
            raise serializers.ValidationError(
                {"mode": "test-time training runs the dual loop (method repirl or rloo)"}
            )
        return attrs

    def create(self, validated_data):
        return ExperimentSettings(**validated_data)


def experiment_section(settings: ExperimentSettings) -> dict:
    """The ``[experiment]`` section as strings, ready for a config file."""
    section = {}
    for key, value in asdict(settings).items():
        if value is None:
            section[key] = "none"
        elif isinstance(value, bool):
            section[key] = str(value).lower()
        elif isinstance(value, float):
            section[key] = repr(value)
        else:
            section[key] = str(value)
    return section
