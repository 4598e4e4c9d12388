"""Exception types shared across the package."""


class DaptError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DaptError):
    """Operand shapes do not conform for the requested operation."""


class ContractError(DaptError):
    """A documented precondition was violated by the caller."""


class NumericalError(DaptError):
    """A computation produced or detected a non-finite or degenerate value."""


class TrainingAbort(NumericalError):
    """Training stopped because a loss value or prompt entry went non-finite."""

    def __init__(self, step: int, component: str, message: str = ""):
        self.step = step
        self.component = component
        super().__init__(message or f"non-finite {component} at step {step}")


class ConfigError(DaptError):
    """Invalid configuration value or combination."""


class DatasetError(DaptError):
    """Dataset does not satisfy a structural requirement."""


class PromptParseError(DaptError):
    """Prompt file is malformed; ``offset`` is the byte position of the failure."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class PromptFormatError(DaptError):
    """Prompt file payload disagrees with the shape promised by its header."""
