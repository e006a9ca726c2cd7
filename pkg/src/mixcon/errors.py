"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or network specification is invalid."""


class ShapeError(ValueError):
    """A tensor shape does not match what a layer or operation expects."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class FormatError(ValueError):
    """A binary or text file does not parse; message carries the offset."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss; message names epoch and batch."""


class AttackError(RuntimeError):
    """An inversion run produced a non-finite objective."""
