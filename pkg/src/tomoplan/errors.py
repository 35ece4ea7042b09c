"""Exception types shared across the package.

Everything numerical derives from :class:`TomoplanError` so the CLI can map
library failures to exit code 1.  :class:`SchemaError` marks malformed input
payloads (descriptors, JSON files) and maps to exit code 2 instead.
"""


class TomoplanError(Exception):
    """Base class for all library errors."""


class SchemaError(TomoplanError):
    """Input payload violates the documented format."""


class NotHermitianError(TomoplanError):
    """Matrix expected hermitian is not, beyond tolerance."""


class DimMismatchError(TomoplanError):
    """Operands live in different Hilbert space dimensions."""


class OutOfBallError(TomoplanError):
    """Bloch vector longer than 1 (beyond tolerance)."""


class TauNotInteriorError(TomoplanError):
    """Reference state has an outcome probability or eigenvalue below the floor."""


class SingularMError(TomoplanError):
    """Knowledge matrix numerically singular; measures undefined."""


class BadSplitError(TomoplanError):
    """Proposed projector split does not refine the chosen outcome."""


class RankDeficientError(TomoplanError):
    """Data insufficient to determine the requested fit."""


class NoConvergenceError(TomoplanError):
    """Iterative solver exhausted its budget without meeting tolerance."""


class MissingComponentsError(TomoplanError):
    """Operation needs the superoperator component table, which is absent."""


class SingularRError(TomoplanError):
    """Diagonal-sector block of a twirled operator is singular."""


class OddDimensionError(TomoplanError):
    """Pair-partition construction requires an even dimension."""


class BudgetExceededError(TomoplanError):
    """Measurement budget exhausted before the stopping rule fired."""


class EmptyEnsembleError(TomoplanError):
    """Aggregate called on an empty trial collection."""
