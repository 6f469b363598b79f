"""
Exception hierarchy shared by the services and the CLI

Every error carries an ``exit_code`` the CLI error handler turns into the
process exit status.
"""
from typing import Optional


class BGRLError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidParameterError(BGRLError, ValueError):
    """Precondition on a numeric argument failed"""


class DimensionMismatchError(BGRLError, ValueError):
    """Vector or matrix dimensions disagree"""


class SupportTooLargeError(BGRLError):
    """Exact OT requested on a support the network simplex solver refuses"""


class EnumerationLimitError(BGRLError):
    """Exact trajectory enumeration would exceed the configured limit"""


class RolloutError(BGRLError, RuntimeError):
    """An episode could not be completed"""

    def __init__(self, detail: str, step: Optional[int] = None, perturbation: Optional[int] = None):
        super().__init__(detail)
        self.step = step
        self.perturbation = perturbation


class ConfigError(BGRLError):
    exit_code = 2

    def __init__(self, detail: str, line: Optional[int] = None):
        message = f"line {line}: {detail}" if line is not None else detail
        super().__init__(message)
        self.line = line


class UnknownSuiteError(BGRLError):
    exit_code = 2


class IterationError(BGRLError):
    """Wraps a failure inside an outer training iteration"""

    def __init__(self, detail: str, iteration: int):
        super().__init__(f"iteration {iteration}: {detail}")
        self.iteration = iteration
