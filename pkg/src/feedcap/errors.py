"""Exception types shared across feedcap."""


class FeedcapError(Exception):
    """Base class for all feedcap errors."""


class SpecError(FeedcapError):
    """A channel spec failed to parse or validate."""


class FlagCheckError(SpecError):
    """A declared structure flag does not hold for the spec."""

    def __init__(self, flag, counterexample):
        self.flag = flag
        self.counterexample = counterexample
        super().__init__(f"flag {flag!r} fails: {counterexample}")


class CapExceeded(FeedcapError):
    """An enumeration would exceed the configured size cap."""

    def __init__(self, what, size, cap):
        self.what = what
        self.size = size
        self.cap = cap
        super().__init__(f"{what}: size {size} exceeds cap {cap}")


class ZeroProbabilityObservation(FeedcapError):
    """The filter was asked to condition on an output of zero predictive mass."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


class ZeroMassCell(FeedcapError):
    pass


class InternalDisagreement(FeedcapError):
    """Two independent formulas for the same quantity disagree."""


class CaseMismatch(FeedcapError):
    pass


class FlagUnsupported(FeedcapError):
    pass


class NotConverged(FeedcapError):
    """An iterative solver stopped without meeting its tolerance.

    ``result`` carries the best-so-far object when one exists.
    """

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class NotErgodic(FeedcapError):
    pass
