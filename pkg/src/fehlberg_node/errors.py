"""Exception types shared across the package."""


class NonFiniteError(ArithmeticError):
    """A computation produced NaN or Inf where a finite value is required."""


class StepSizeUnderflowError(RuntimeError):
    """An adaptive integrator drove its step size below the representable floor."""


class DataFormatError(ValueError):
    """An input file (trajectory CSV, checkpoint, ...) does not match its schema."""
