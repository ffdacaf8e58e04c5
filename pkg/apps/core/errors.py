"""
Exception hierarchy for repirl.

Every failure the framework reports deliberately is a ``RepirlError``.
``exit_code`` is what the experiment command returns when the error
reaches it.
"""


class RepirlError(Exception):
    """Base class for all framework errors."""

    exit_code = 3
    category = "domain"


# MDP


class StepLimitError(RepirlError):
    """A step was requested from a terminal state or past the horizon."""


class InvalidActionError(RepirlError):
    """A token id outside the vocabulary."""


class UnknownPromptError(RepirlError, LookupError):
    """A prompt id that the MDP does not define."""


class EnumerationTooLargeError(RepirlError):
    """An exact computation would exceed the configured enumeration cap."""


class EmptyTrajectoryError(RepirlError):
    """An operation that needs at least one token received none."""


class StepIndexError(RepirlError, IndexError):
    """A step index outside 1..length of a trajectory."""


# Learning


class MissingLogprobError(RepirlError):
    """A trajectory without behavior log-probabilities reached a learner."""


class GroupTooSmallError(RepirlError):
    """Leave-one-out and group-normalized advantages need two or more rewards."""


class EmptyDatasetError(RepirlError):
    """A loss or gradient was requested over an empty trajectory set."""


class AnnotationRequiredError(RepirlError):
    """A method needs labels the data does not carry."""


class DegenerateSampleError(RepirlError):
    """A sample with zero proposal density."""


class LabelRangeError(RepirlError):
    """A step label outside [0, 1]."""


# Configuration and persistence


class ConfigurationError(RepirlError):
    """A configuration that cannot run, e.g. an empty expert pool."""

    exit_code = 2
    category = "configuration"


class ConfigParseError(ConfigurationError):
    """The config file is not valid key=value text with section headers."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigValidationError(ConfigurationError):
    """A config value failed validation; ``key`` names it."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class CheckpointFormatError(RepirlError):
    """A checkpoint file is malformed or incompatible with the target model."""

    category = "checkpoint"


class RunExistsError(RepirlError):
    """The output directory already holds a completed run of the command."""

    exit_code = 4
    category = "run-exists"


class DatasetFormatError(RepirlError):
    """A trajectory dataset line is not a valid record."""

    category = "dataset"


class InvariantViolationError(RepirlError):
    """One or more oracle checks exceeded their tolerance."""

    category = "oracle"
