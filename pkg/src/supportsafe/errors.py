"""Exception types raised by the toolkit.

Each class corresponds to one failure code of the public operations; the
``code`` attribute carries the upper-case name used in reports.
"""


class SupportSafeError(Exception):
    code = "ERROR"


class NonFiniteStateError(SupportSafeError):
    code = "NON_FINITE_STATE"


class InvalidCertificateError(SupportSafeError, ValueError):
    code = "INVALID_CERT"


class AllZeroWeightsError(SupportSafeError):
    code = "ALL_ZERO_WEIGHTS"


class NoConvergenceError(SupportSafeError):
    code = "NO_CONVERGENCE"


class DimensionMismatchError(SupportSafeError, ValueError):
    code = "DIMENSION_MISMATCH"


class BoundViolationError(SupportSafeError):
    code = "BOUND_VIOLATION"

    def __init__(self, message, quantity=None, value=None, bound=None):
        super().__init__(message)
        self.quantity = quantity
        self.value = value
        self.bound = bound


class AssumptionUnmetError(SupportSafeError):
    code = "ASSUMPTION_UNMET"


class EmptyInputError(SupportSafeError, ValueError):
    code = "EMPTY_INPUT"
