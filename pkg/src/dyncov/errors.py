"""Exception types.

Every error carries a ``category`` used by the CLI to print a one-line,
machine-parsable failure reason.
"""


class DyncovError(Exception):
    category = "Error"


class NotPositiveDefinite(DyncovError, ValueError):
    category = "NotPositiveDefinite"


class DimensionMismatch(DyncovError, ValueError):
    category = "DimensionMismatch"


class InvalidDof(DyncovError, ValueError):
    category = "InvalidDof"


class InvalidParams(DyncovError, ValueError):
    category = "InvalidParams"


class EmptyCloud(DyncovError, ValueError):
    category = "EmptyCloud"


class DegenerateWeights(DyncovError, ValueError):
    category = "DegenerateWeights"


class RejectionBudgetExceeded(DyncovError, RuntimeError):
    category = "RejectionBudgetExceeded"


class TooFewObservations(DyncovError, ValueError):
    category = "TooFewObservations"


class NoFeasibleStart(DyncovError, RuntimeError):
    category = "NoFeasibleStart"


class NonFinite(DyncovError, RuntimeError):
    category = "NonFinite"


class EmptyRun(DyncovError, ValueError):
    category = "EmptyRun"


class RunAborted(DyncovError, RuntimeError):
    category = "RunAborted"


class DegenerateTable(DyncovError, ValueError):
    category = "DegenerateTable"


class UnsupportedK(DyncovError, ValueError):
    category = "UnsupportedK"


class UnsupportedAlpha(DyncovError, ValueError):
    category = "UnsupportedAlpha"


class EmptyFile(DyncovError, ValueError):
    category = "EmptyFile"


class HeaderMismatch(DyncovError, ValueError):
    category = "HeaderMismatch"


class NonPositivePrice(DyncovError, ValueError):
    category = "NonPositivePrice"


class ZeroVarianceColumn(DyncovError, ValueError):
    category = "ZeroVarianceColumn"
