"""Exception hierarchy shared by every module.

Validation problems (bad shapes, out-of-range arguments, malformed configs)
derive from :class:`ValidationError`; anything that goes wrong *while
computing* (divergence, non-convergence) derives from :class:`NumericalError`.
The CLI maps the first family to exit code 1 and the second to exit code 2.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """An argument, shape or configuration value is not acceptable."""


class DimensionError(ValidationError):
    """Operand shapes do not compose."""


class NumericalError(ArithmeticError):
    """A computation failed to produce a finite / converged result."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration limit.

    ``gap`` is the last observed convergence measure (relative change for the
    power iteration, gradient norm for inner solvers).
    """

    def __init__(self, message: str, gap: float, iterations: int):
        super().__init__(f"{message} (gap={gap:.3e} after {iterations} iterations)")
        self.gap = gap
        self.iterations = iterations


class DivergenceError(NumericalError):
    """A training loop produced a non-finite loss or gradient.

    ``state`` optionally carries whatever partial traces the loop had collected.
    """

    def __init__(self, message: str, iteration: int, last_finite_loss: float, state=None):
        super().__init__(
            f"{message} at iteration {iteration} (last finite loss {last_finite_loss!r})"
        )
        self.iteration = iteration
        self.last_finite_loss = last_finite_loss
        self.state = state


class ContainerFormatError(ValueError):
    """A weight container could not be parsed; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
