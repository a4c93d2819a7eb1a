"""Exception types shared across the package.

Every failure mode that callers are expected to handle gets its own class so
the CLI can map them onto stable exit codes.
"""


class NarrowforgeError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(NarrowforgeError):
    """Input or layer dimensions do not line up."""


class NonTransversal(NarrowforgeError):
    """Projection direction is not transversal to the hyperplane (a.c <= 0)."""


class DegenerateSplit(NarrowforgeError):
    """A half-space split left one side empty where both were required."""


class DuplicatePoints(NarrowforgeError):
    """A point set that must be pairwise distinct contains duplicates."""


class DuplicateCodewords(NarrowforgeError):
    """Codewords handed to a decoder builder are not pairwise distinct."""


class RetryExhausted(NarrowforgeError):
    """Seeded retries ran out before a valid random draw was found."""


class BitBudgetExceeded(NarrowforgeError):
    """A dyadic packing would need more mantissa bits than a double carries."""


class DeadZoneTooWide(NarrowforgeError):
    """Requested staircase transition width does not fit between grid points."""


class ResourceLimit(NarrowforgeError):
    """A configured cap (cell count, stage count, ...) was exceeded."""


class VerificationFailed(NarrowforgeError):
    """A constructed object failed its numerical acceptance check."""


class NonConvergent(NarrowforgeError):
    """An adaptive refinement loop hit its iteration cap."""


class InconclusiveBudget(NarrowforgeError):
    """A search exhausted its budget without producing a verdict."""


class DomainViolation(NarrowforgeError):
    """A map left the domain it is required to preserve."""


class PastDependenceError(NarrowforgeError):
    """Sequence target declared future-dependent where only past is allowed."""
