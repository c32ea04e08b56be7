"""Exception types shared across the package.

Plain argument mistakes (T = 0, t outside [0, 1], mismatched dimensions) raise
``ValueError`` directly. The classes below mark failures callers are expected
to tell apart, most of all the CLI when picking its exit code.
"""


class AnchorFlowError(Exception):
    """Base class for all package specific errors."""


class ConfigError(AnchorFlowError, ValueError):
    """Config file could not be parsed or violates an invariant."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None) -> None:
        self.key = key
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"[{key}] "
        super().__init__(f"{prefix}{message}")


class NumericFailureError(AnchorFlowError, ArithmeticError):
    """A computation produced non-finite values or hit a singular matrix."""

    def __init__(self, message: str, step_index: int | None = None) -> None:
        self.step_index = step_index
        if step_index is not None:
            message = f"step {step_index}: {message}"
        super().__init__(message)


class OracleDegenerateError(NumericFailureError):
    """Importance weights collapsed; raise the sample count or move the query point."""


class TrainingDivergedError(NumericFailureError):
    """Training loss exploded."""


class UnsupportedDimensionError(AnchorFlowError, ValueError):
    """Operation is only defined for a specific latent dimension."""


class VerificationError(AnchorFlowError):
    """At least one verification check failed."""

    def __init__(self, check_name: str, detail: str = "") -> None:
        self.check_name = check_name
        super().__init__(f"verification failed: {check_name}" + (f" ({detail})" if detail else ""))
