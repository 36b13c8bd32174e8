"""Exception hierarchy shared by every subpackage.

The CLI maps these onto process exit codes, so each class carries the code
it should produce when it escapes to the top level.
"""


class IcicleError(Exception):
    exit_code = 1


class DimensionError(IcicleError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(IcicleError, ValueError):
    """Input is numerically degenerate (zero-norm row, empty column, ...)."""


class ContractError(IcicleError, ValueError):
    """A documented precondition on the arguments does not hold."""


class DomainError(IcicleError, ValueError):
    """Argument lies outside the mathematical domain of the operation."""


class ConfigError(IcicleError, ValueError):
    exit_code = 2


class ValidationError(ConfigError):
    """A SyntheticSpec violates one of its invariants."""


class FormatError(IcicleError, ValueError):
    exit_code = 3

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NonFiniteError(IcicleError, FloatingPointError):
    """A computation produced NaN or Inf."""


class TrainingDivergence(IcicleError, RuntimeError):
    exit_code = 4

    def __init__(self, component: str, value: float, step: int | None = None):
        self.component = component
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss in component {component!r}{where}: {value}")
