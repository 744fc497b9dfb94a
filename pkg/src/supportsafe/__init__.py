"""Support-safe inference and sparse physical-law recovery for hybrid systems."""

from .errors import (AllZeroWeightsError, AssumptionUnmetError, BoundViolationError, DimensionMismatchError,
                     EmptyInputError, InvalidCertificateError, NoConvergenceError, NonFiniteStateError,
                     SupportSafeError)

__version__ = "0.1.0"
