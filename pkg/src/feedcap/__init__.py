"""Feedback capacity of finite-state channels: directed information, code
functions, belief filters and an average-cost dynamic-programming solver."""

from .errors import (
    CapExceeded,
    CaseMismatch,
    FeedcapError,
    FlagCheckError,
    FlagUnsupported,
    InternalDisagreement,
    NotConverged,
    NotErgodic,
    SpecError,
    ZeroMassCell,
    ZeroProbabilityObservation,
)
from .kernels import GeneralChannelSpec, MarkovChannelSpec, load_spec, save_spec

__version__ = "0.1.0"

__all__ = [
    "CapExceeded", "CaseMismatch", "FeedcapError", "FlagCheckError", "FlagUnsupported", "GeneralChannelSpec",
    "InternalDisagreement", "MarkovChannelSpec", "NotConverged", "NotErgodic", "SpecError", "ZeroMassCell",
    "ZeroProbabilityObservation", "load_spec", "save_spec", "__version__",
]
