class ContractViolation(ValueError):
    """A precondition of a public operation was not met."""


class NumericFailure(ArithmeticError):
    """A non-finite value appeared during evaluation or training."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class UnsupportedOperation(TypeError):
    """An operation outside the registered primitive set hit the tape."""
