"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 2, data
problems exit 3, broken internal invariants exit 4.
"""


class BotnetIdsError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(BotnetIdsError, ValueError):
    """Operand shapes do not satisfy an operation's preconditions."""


class ConfigError(BotnetIdsError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DataError(BotnetIdsError, ValueError):
    """Input data is missing, malformed, or insufficient."""


class LabelError(BotnetIdsError, ValueError):
    """A class label is outside the valid range."""


class GradientStateError(BotnetIdsError, RuntimeError):
    """A backward pass was requested without a usable forward cache."""


class ContainerError(BotnetIdsError, ValueError):
    """Base class for checkpoint / dataset-artifact file problems."""


class ContainerFormatError(ContainerError):
    """The file is not a recognized container (bad magic or header)."""


class ContainerVersionError(ContainerError):
    """The container version is not supported by this build."""


class ContainerTruncatedError(ContainerError):
    """The file ends before the declared header or payload does."""
