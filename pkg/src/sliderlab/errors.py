"""Exception types shared across the library."""


class SliderLabError(Exception):
    """Base class for all library errors (CLI maps these to exit code 1)."""


class ShapeError(SliderLabError, ValueError):
    """Operands have incompatible shapes for the requested operation."""


class ConfigError(SliderLabError, ValueError):
    """A configuration value is out of range or an option is unknown."""


class ContractError(SliderLabError, ValueError):
    """A documented precondition of an operation was violated."""


class DivergenceError(SliderLabError, ArithmeticError):
    """Training produced a non-finite loss.

    ``last_stable_step`` is the index of the last iteration that completed
    with a finite loss.
    """

    def __init__(self, message: str, last_stable_step: int):
        super().__init__(message)
        self.last_stable_step = last_stable_step


class UnknownTokenError(SliderLabError, LookupError):
    """A prompt token is neither in the vocabulary nor overridden."""

    def __init__(self, token: str):
        super().__init__(f"unknown token {token!r}")
        self.token = token


class CompatibilityError(SliderLabError, ValueError):
    """Encoder fingerprints (or embedding dimensions) do not match."""


class FormatError(SliderLabError, ValueError):
    """A persisted file is malformed; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
