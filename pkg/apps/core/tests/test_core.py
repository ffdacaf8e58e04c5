"""
Tests for seeded streams, framework settings and the error hierarchy.
"""
from django.test import SimpleTestCase, override_settings

from apps.core.conf import DEFAULTS, framework_setting
from apps.core.errors import (
    ConfigParseError,
    ConfigurationError,
    ConfigValidationError,
    EnumerationTooLargeError,
    InvariantViolationError,
    RepirlError,
    RunExistsError,
)
from apps.core.random import derive_seed, stream


class TestStreams(SimpleTestCase):
    def test_same_keys_same_draws(self):
        """Test that a seed and tag path always give the same draws."""
        first = stream(7, 1, 2).integers(1000, size=5)
        second = stream(7, 1, 2).integers(1000, size=5)
        self.assertEqual(list(first), list(second))

    def test_tags_separate_streams(self):
        """Test that different tags give different draws."""
        first = stream(7, 1, 2).integers(1 << 30, size=4)
        second = stream(7, 2, 1).integers(1 << 30, size=4)
        self.assertNotEqual(list(first), list(second))
        self.assertNotEqual(derive_seed(0, 1), derive_seed(0, 2))

    def test_derived_seed_range(self):
        """Test that derived seeds are stable 32-bit integers."""
        seed = derive_seed(3, 4, 5)
        self.assertEqual(seed, derive_seed(3, 4, 5))
        self.assertTrue(0 <= seed < 2**32)


class TestFrameworkSetting(SimpleTestCase):
    @override_settings(REPIRL={"WORKERS": 4})
    def test_falls_back_to_defaults(self):
        """Test that missing keys take the library default."""
        self.assertEqual(framework_setting("WORKERS"), 4)
        self.assertEqual(framework_setting("ENUMERATION_CAP"), DEFAULTS["ENUMERATION_CAP"])


class TestErrors(SimpleTestCase):
    def test_exit_codes(self):
        """Test the exit status each error category maps to."""
        self.assertEqual(ConfigValidationError("train.beta", "bad").exit_code, 2)
        self.assertEqual(ConfigParseError("bad").exit_code, 2)
        self.assertEqual(EnumerationTooLargeError("big").exit_code, 3)
        self.assertEqual(InvariantViolationError("failed").exit_code, 3)
        self.assertEqual(RunExistsError("done").exit_code, 4)

    def test_messages(self):
        """Test that keys and lines appear in messages."""
        error = ConfigValidationError("train.beta", "must be positive")
        self.assertEqual(error.key, "train.beta")
        self.assertEqual(str(error), "train.beta: must be positive")
        self.assertEqual(str(ConfigParseError("no header", 1)), "line 1: no header")
        self.assertIsNone(ConfigParseError("unreadable").line)

    def test_hierarchy(self):
        """Test that every configuration error is a framework error."""
        self.assertTrue(issubclass(ConfigParseError, ConfigurationError))
        self.assertTrue(issubclass(RunExistsError, RepirlError))
