"""
Serializers for evaluation config and reports.
"""
from rest_framework import serializers

from apps.evaluation.models import EvalConfig, ScorerKind


class IntegerListField(serializers.Field):
    """Comma-separated integers, e.g. ``1,4,16``."""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item for item in data.replace(" ", "").split(",") if item]
        try:
            return tuple(int(item) for item in data)
        except (TypeError, ValueError):
            raise serializers.ValidationError("expected comma-separated integers")

    def to_representation(self, value):
        return ",".join(str(item) for item in value)


class EvalConfigSerializer(serializers.Serializer):
    """Validates the ``[eval]`` section."""

    greedy = serializers.BooleanField(default=True)
    n_grid = IntegerListField(default=(1, 4, 16))
    tts_seeds = serializers.IntegerField(min_value=1, default=20)
    temperature = serializers.FloatField(min_value=1e-6, default=0.8)
    auc_negatives = serializers.IntegerField(min_value=1, default=4)
    scorer = serializers.ChoiceField(choices=ScorerKind.choices, default=ScorerKind.LEARNED)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate_n_grid(self, value):
        if not value or any(n < 1 for n in value):
            raise serializers.ValidationError("needs positive sample counts")
        return value

    def create(self, validated_data):
        return EvalConfig(**validated_data)


class TtsPointSerializer(serializers.Serializer):
    n = serializers.IntegerField()
    selector = serializers.CharField()
    mean = serializers.FloatField()
    stderr = serializers.FloatField()


class EvalReportSerializer(serializers.Serializer):
    """JSON form of an EvalReport."""

    pass_at_1 = serializers.FloatField()
    per_prompt_pass = serializers.SerializerMethodField()
    prm_auc = serializers.FloatField(allow_null=True)
    tts = TtsPointSerializer(many=True)

    def get_per_prompt_pass(self, report):
        return {str(prompt_id): value for prompt_id, value in report.per_prompt_pass.items()}


def eval_config_section(config: EvalConfig) -> dict:
    """The ``[eval]`` section as strings, ready for a config file."""
    data = EvalConfigSerializer(config).data
    return {
        key: str(value).lower() if isinstance(value, bool) else str(value)
        for key, value in data.items()
    }
