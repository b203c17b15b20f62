"""Exception types raised across the package."""


class TailoredASError(Exception):
    """Base class for all package errors."""


class DegenerateWindow(TailoredASError):
    """No kernel mass near the requested landmark window."""


class NoMeasurement(TailoredASError, LookupError):
    """No covariate measurement at or before the query time."""


class InvalidN(TailoredASError, ValueError):
    pass


class ZeroPrevalence(TailoredASError, ValueError):
    """Estimated prevalence is zero, so the TNR weight is unbounded."""


class EmptyData(TailoredASError, ValueError):
    pass


class GZero(TailoredASError):
    """Censoring survival estimate is zero where an inverse weight is needed."""


class LengthMismatch(TailoredASError, ValueError):
    pass


class NoConvergence(TailoredASError, RuntimeError):
    pass


class InvalidGap(TailoredASError, ValueError):
    pass


class EmptyStratum(TailoredASError):
    """A landmark has no cases or no controls under the true event times."""


class StatisticFailure(TailoredASError, RuntimeError):
    pass
