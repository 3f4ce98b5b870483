"""Trainer exception types, mapped onto CLI exit codes."""


class ConfigError(ValueError):
    """Bad options, specs or input parameters (exit code 2)."""


class TrainerError(RuntimeError):
    """Training blew up numerically — non-finite loss (exit code 1)."""


class WeightFormatError(ValueError):
    """A weight file, dataset or quote file violates its format (exit code 3)."""
