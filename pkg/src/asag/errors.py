"""Exception and warning types shared across the package."""


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    """A call violated an operation's preconditions."""


class MissingGradientError(RuntimeError):
    pass


class InputError(ValueError):
    pass


class TrainingDivergence(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


class NonConvergenceWarning(UserWarning):
    pass


class ParseError(InputError):
    """Malformed input file; the message carries the file and line."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line
