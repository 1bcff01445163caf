"""Exception types shared across the package."""


class StepDistillError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StepDistillError, ValueError):
    """An argument violates a precondition (non-finite values, bad ranges, ...)."""


class ShapeMismatchError(InvalidInputError):
    """Two arrays or pyramids that must be shape-identical are not."""


class InvalidBoxError(InvalidInputError):
    """A bounding box is degenerate or malformed."""


class InvalidRangeError(InvalidInputError):
    """A step range is empty or not covered by the log."""


class InvalidConfigError(StepDistillError, ValueError):
    """A configuration file or value is invalid; the message names the field."""


class CalibrationBracketError(StepDistillError, RuntimeError):
    """The calibration target lies outside the ratios at the bracket endpoints."""

    def __init__(self, target: float, lo: float, ratio_lo: float,
                 hi: float, ratio_hi: float):
        self.target = target
        self.lo = lo
        self.ratio_lo = ratio_lo
        self.hi = hi
        self.ratio_hi = ratio_hi
        super().__init__(
            f"target ratio {target} is not bracketed: "
            f"r({lo}) = {ratio_lo}, r({hi}) = {ratio_hi}"
        )


class DivergedError(StepDistillError, RuntimeError):
    """Training produced a non-finite loss. Carries the step and last finite row."""

    def __init__(self, step: int, last_row=None):
        self.step = step
        self.last_row = last_row
        super().__init__(f"non-finite loss at step {step}")
