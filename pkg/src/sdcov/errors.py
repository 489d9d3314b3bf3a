"""Exception taxonomy shared across the package."""


class SdcovError(Exception):
    """Base class for all package errors."""


class FilterError(SdcovError):
    """Numerical failure inside a filtering recursion."""


class NonInvertibleF(FilterError):
    """Innovation covariance is singular or has condition number above 1e12."""

    def __init__(self, t: int = -1, cond: float = float("inf")):
        self.t = t
        self.cond = cond
        super().__init__(f"innovation covariance not invertible at step {t} (cond~{cond:.3g})")


class DivergedFilter(FilterError):
    """A log-variance state left the +/-50 stability region."""

    def __init__(self, t: int = -1):
        self.t = t
        super().__init__(f"filter diverged at step {t}: log-variance outside +/-50")


class ParameterOverflow(SdcovError):
    """A link evaluation would overflow double precision."""


class SingularCovariance(SdcovError):
    """Covariance matrix is numerically singular where an inverse is required."""


class InsufficientPresample(SdcovError):
    """Presample too short to initialize the filter."""


class UnknownPattern(SdcovError):
    """Correlation pattern tag not recognized."""


class EmptySeries(SdcovError):
    """A series contains no observations."""


class DegenerateReturns(SdcovError):
    """Synchronized returns are almost all zero; the estimator is unidentified."""


class LengthMismatch(SdcovError):
    """Loss or return series do not share a common length."""


class ParseError(SdcovError):
    """Malformed input row in a tick file."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NonPositivePrice(ParseError):
    """Price field is zero or negative, so the log-price is undefined."""

    def __init__(self, line: int, price: float):
        self.price = price
        super(ParseError, self).__init__(f"line {line}: non-positive price {price!r}")
        self.line = line


class EmptyFile(SdcovError):
    """Tick file holds no data rows."""


class IoError(SdcovError):
    """Filesystem failure while writing results."""
