"""
Tests for experiment config parsing.
"""
import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from apps.core.errors import ConfigParseError, ConfigValidationError
from apps.evaluation.models import EvalConfig
from apps.experiments.config import grid_cells, parse_config
from apps.experiments.models import ExperimentSettings, TrainingMode
from apps.mdp.models import TaskConfig
from apps.trainer.models import TrainConfig


class ConfigFileMixin:
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text, name="experiment.cfg"):
        path = Path(self.tmp.name) / name
        path.write_text(text, encoding="utf-8")
        return path


class TestParseConfig(ConfigFileMixin, SimpleTestCase):
    """Test sections, defaults and overrides."""

    def test_empty_file_gives_defaults(self):
        """Test that an empty config resolves to every default."""
        resolved = parse_config(self.write(""))
        self.assertEqual(resolved.task, TaskConfig())
        self.assertEqual(resolved.train, TrainConfig())
        self.assertEqual(resolved.eval, EvalConfig())
        self.assertEqual(resolved.experiment, ExperimentSettings())
        self.assertEqual(resolved.ablate, {})
        self.assertEqual(resolved.train.lambda_prm, 0.05)

    def test_section_values(self):
        """Test that typed values are read from each section."""
        path = self.write(
            "[task]\ntask_kind = copy_sort\nvocab_size = 4\nhorizon = 3\nprompt_length = 3\n"
            "[train]\nadv_estimator = grpo\naccuracy_filter = 0.1, 0.9  # band\n"
            "[eval]\nn_grid = 16,1,4\n"
            "[experiment]\nmethod = dpo\nmcts_exact = true\n"
        )
        resolved = parse_config(path)
        self.assertEqual(resolved.task.task_kind, "copy_sort")
        self.assertEqual(resolved.train.adv_estimator, "grpo")
        self.assertEqual(resolved.train.accuracy_filter, (0.1, 0.9))
        self.assertEqual(resolved.eval.n_grid, (1, 4, 16))
        self.assertEqual(resolved.experiment.method, "dpo")
        self.assertTrue(resolved.experiment.is_baseline)
        self.assertIs(resolved.experiment.mcts_exact, True)

    def test_override_precedence(self):
        """Test that overrides win over file values."""
        path = self.write("[train]\nlambda_prm = 0.5\n")
        resolved = parse_config(path, ["lambda_prm=0", "eval.tts_seeds=3"])
        self.assertEqual(resolved.train.lambda_prm, 0.0)
        self.assertEqual(resolved.eval.tts_seeds, 3)

    def test_seed_reaches_every_seeded_section(self):
        """Test that the seed flag sets the task, train and eval seeds."""
        resolved = parse_config(None, seed=5)
        self.assertEqual(
            (resolved.task.seed, resolved.train.seed, resolved.eval.seed), (5, 5, 5)
        )

    @override_settings(REPIRL={"WORKERS": 3})
    def test_workers_default_from_settings(self):
        """Test that the worker count defaults to the framework setting."""
        self.assertEqual(parse_config(None).train.workers, 3)
        self.assertEqual(parse_config(None, ["workers=2"]).train.workers, 2)

    def test_resolved_text_round_trip(self):
        """Test that the rendered config parses back to the same values."""
        path = self.write(
            "[train]\nvalue_clip = none\nepochs = 3\n"
            "[experiment]\nmethod = mcts_prm\nmcts_k = 4\n"
            "[ablate]\nbeta = 0.5 | 1.0\n"
        )
        resolved = parse_config(path)
        again = parse_config(self.write(resolved.text, "resolved.cfg"))
        self.assertEqual(again.train, resolved.train)
        self.assertEqual(again.experiment, resolved.experiment)
        self.assertEqual(again.ablate, resolved.ablate)
        self.assertEqual(again.digest, resolved.digest)
        self.assertIsNone(again.train.value_clip)

    def test_mode_choice(self):
        """Test the training mode values."""
        resolved = parse_config(None, ["experiment.mode=hard"])
        self.assertEqual(resolved.experiment.mode, TrainingMode.HARD)


class TestConfigErrors(ConfigFileMixin, SimpleTestCase):
    """Test parse and validation failures."""

    def assertInvalid(self, key, text="", overrides=()):
        with self.assertRaises(ConfigValidationError) as context:
            parse_config(self.write(text), overrides)
        self.assertEqual(context.exception.key, key)

    def assertParseError(self, line, text):
        with self.assertRaises(ConfigParseError) as context:
            parse_config(self.write(text))
        self.assertEqual(context.exception.line, line)

    def test_clip_ratio_bounds(self):
        """Test that a clip ratio outside (0, 1) names its key."""
        self.assertInvalid("train.clip_ratio", overrides=["clip_ratio=1.5"])

    def test_unknown_key(self):
        """Test that unknown keys are errors."""
        self.assertInvalid("train.bogus", "[train]\nbogus = 1\n")

    def test_unknown_section(self):
        """Test that unknown sections are errors."""
        self.assertInvalid("model", "[model]\nwidth = 3\n")

    def test_bad_value(self):
        """Test that a value of the wrong type names its key."""
        self.assertInvalid("task.horizon", "[task]\nhorizon = long\n")

    def test_unknown_method(self):
        """Test that the method must be a known one."""
        self.assertInvalid("experiment.method", "[experiment]\nmethod = ppo\n")

    def test_test_time_training_method(self):
        """Test that test-time training needs the dual loop."""
        self.assertInvalid("experiment.mode", "[experiment]\nmethod = bc\nmode = ttt\n")

    def test_ambiguous_bare_key(self):
        """Test that a bare key present in several sections is rejected."""
        self.assertInvalid("seed", overrides=["seed=3"])

    def test_key_before_header(self):
        """Test the line number of a key outside any section."""
        self.assertParseError(1, "beta = 2\n")

    def test_duplicate_key(self):
        """Test the line number of a repeated key."""
        self.assertParseError(3, "[train]\nbeta = 1\nbeta = 2\n")

    def test_line_without_delimiter(self):
        """Test the line number of a line that is not key=value."""
        self.assertParseError(2, "[train]\nnot a pair\n")

    def test_malformed_override(self):
        """Test that an override needs an equals sign."""
        with self.assertRaises(ConfigParseError):
            parse_config(None, ["lambda_prm"])

    def test_missing_file(self):
        """Test that an unreadable file is a parse error."""
        with self.assertRaises(ConfigParseError):
            parse_config(Path(self.tmp.name) / "absent.cfg")


class TestAblationGrid(ConfigFileMixin, SimpleTestCase):
    """Test the ``[ablate]`` section."""

    def test_cells(self):
        """Test the product of listed values in key order."""
        path = self.write(
            "[train]\nepochs = 1\n"
            "[ablate]\nuse_importance_weights = true | false\npolicy_epochs = 1 | 2\n"
        )
        cells = list(grid_cells(parse_config(path)))
        self.assertEqual(len(cells), 4)
        assignments = [assignment for assignment, _ in cells]
        self.assertEqual(assignments[1], {"use_importance_weights": "true", "policy_epochs": "2"})
        configs = [cfg for _, cfg in cells]
        self.assertEqual(
            [(c.use_importance_weights, c.policy_epochs) for c in configs],
            [(True, 1), (True, 2), (False, 1), (False, 2)],
        )
        self.assertTrue(all(cfg.epochs == 1 for cfg in configs))

    def test_empty_grid_is_one_cell(self):
        """Test that no ablation keys give the base config alone."""
        cells = list(grid_cells(parse_config(None)))
        self.assertEqual(cells, [({}, TrainConfig())])

    def test_invalid_option(self):
        """Test that every listed value must validate."""
        with self.assertRaises(ConfigValidationError) as context:
            parse_config(self.write("[ablate]\nclip_ratio = 0.1 | 2\n"))
        self.assertEqual(context.exception.key, "ablate.clip_ratio")

    def test_unknown_train_key(self):
        """Test that only train keys can be ablated."""
        with self.assertRaises(ConfigValidationError) as context:
            parse_config(self.write("[ablate]\nhorizon = 2 | 3\n"))
        self.assertEqual(context.exception.key, "ablate.horizon")
