"""
Serializers for the ``[task]`` config section.
"""
from dataclasses import asdict

from rest_framework import serializers

from apps.mdp.models import TaskConfig, TaskKind


class TaskConfigSerializer(serializers.Serializer):
    """Validates ``[task]`` values and builds a TaskConfig."""

    task_kind = serializers.ChoiceField(choices=TaskKind.choices, default=TaskKind.PARITY_CHAIN)
    vocab_size = serializers.IntegerField(min_value=1, max_value=64, default=6)
    horizon = serializers.IntegerField(min_value=1, default=8)
    prompt_length = serializers.IntegerField(min_value=0, default=6)
    min_prompt_length = serializers.IntegerField(min_value=0, default=0)
    num_prompts = serializers.IntegerField(min_value=0, default=0)
    experts_per_prompt = serializers.IntegerField(min_value=1, default=4)
    heldout_fraction = serializers.FloatField(min_value=0.0, max_value=0.9, default=0.0)
    hidden_reward = serializers.BooleanField(default=True)
    synthetic_eos = serializers.BooleanField(default=True)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        if attrs.get("task_kind") in (TaskKind.PARITY_CHAIN, TaskKind.ARITHMETIC_CHAIN):
            if attrs.get("vocab_size", 6) < 6:
                raise serializers.ValidationError(
                    {"vocab_size": "chain tasks need vocab_size >= 6"}
                )
        return attrs

    def create(self, validated_data):
        return TaskConfig(**validated_data)


def task_config_section(config: TaskConfig) -> dict:
    """The ``[task]`` section as strings, ready for a config file."""
    return {
        key: str(value).lower() if isinstance(value, bool) else str(value)
        for key, value in asdict(config).items()
    }
