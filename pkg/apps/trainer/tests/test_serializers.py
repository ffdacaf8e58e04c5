"""
Tests for the train config serializer and run reporting.
"""
import csv
import json
import math
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from apps.trainer.models import IterationRecord, RunMetrics, TrainConfig
from apps.trainer.reporting import write_metrics_csv, write_run_summary
from apps.trainer.serializers import TrainConfigSerializer, train_config_section


class TestTrainConfigSerializer(SimpleTestCase):
    """Test validation of [train] values."""

    def test_defaults(self):
        """Test that an empty section yields the default config."""
        serializer = TrainConfigSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), TrainConfig())

    def test_string_values(self):
        """Test parsing of config-file strings."""
        serializer = TrainConfigSerializer(
            data={
                "n_rollouts": "8",
                "adv_estimator": "grpo",
                "accuracy_filter": "0.1, 0.9",
                "value_clip": "none",
                "promote_correct": "false",
            }
        )
        self.assertTrue(serializer.is_valid(), serializer.errors)
        cfg = serializer.save()
        self.assertEqual(cfg.n_rollouts, 8)
        self.assertEqual(cfg.adv_estimator, "grpo")
        self.assertEqual(cfg.accuracy_filter, (0.1, 0.9))
        self.assertIsNone(cfg.value_clip)
        self.assertFalse(cfg.promote_correct)

    def test_invalid_values(self):
        """Test that bad values are reported per field."""
        serializer = TrainConfigSerializer(
            data={"n_rollouts": "1", "clip_ratio": "1.5", "accuracy_filter": "0.9,0.1"}
        )
        self.assertFalse(serializer.is_valid())
        self.assertEqual(
            set(serializer.errors), {"n_rollouts", "clip_ratio", "accuracy_filter"}
        )

    def test_section_round_trip(self):
        """Test that a written section parses back to the same config."""
        cfg = TrainConfig(lambda_prm=0.1, reward_context_order=2, adv_estimator="grpo")
        serializer = TrainConfigSerializer(data=train_config_section(cfg))
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), cfg)


class TestReporting(SimpleTestCase):
    """Test the metrics CSV and run summary."""

    def metrics(self):
        metrics = RunMetrics()
        metrics.append(IterationRecord(0, 0, outcome_mean=0.25, reward_skipped=True))
        metrics.append(IterationRecord(1, 0, outcome_mean=0.5, pass_at_1=0.75))
        return metrics

    def test_metrics_csv(self):
        """Test the header and cell formatting of the metrics CSV."""
        with tempfile.TemporaryDirectory() as tmp:
            path = write_metrics_csv(self.metrics(), Path(tmp) / "metrics.csv")
            with path.open() as handle:
                rows = list(csv.DictReader(handle))
        self.assertEqual(len(rows), 2)
        self.assertEqual(list(rows[0]), IterationRecord.columns())
        self.assertEqual(rows[0]["reward_skipped"], "1")
        self.assertEqual(rows[0]["pass_at_1"], "nan")
        self.assertEqual(float(rows[1]["pass_at_1"]), 0.75)

    def test_run_summary(self):
        """Test the JSON run summary."""
        with tempfile.TemporaryDirectory() as tmp:
            path = write_run_summary("repirl", TrainConfig(), self.metrics(), Path(tmp) / "s.json")
            summary = json.loads(path.read_text())
        self.assertEqual(summary["method"], "repirl")
        self.assertEqual(summary["iterations"], 2)
        self.assertEqual(summary["final_pass_at_1"], 0.75)
        self.assertEqual(summary["reward_updates"], 1)
        self.assertEqual(summary["config"]["lambda_prm"], "0.05")
        self.assertFalse(math.isnan(summary["final_outcome_mean"]))
