"""Score-driven covariance filtering for noisy, asynchronous price panels.

A conditionally Gaussian local-level model whose noise, scale and
correlation parameters follow GAS (score-driven) dynamics, estimated by
maximum likelihood on irregularly observed multivariate log-prices.
"""

from .errors import (
    DegenerateReturns,
    DivergedFilter,
    EmptyFile,
    EmptySeries,
    InsufficientPresample,
    IoError,
    LengthMismatch,
    NonInvertibleF,
    NonPositivePrice,
    ParameterOverflow,
    ParseError,
    SdcovError,
    SingularCovariance,
    UnknownPattern,
)
from .panel import ObservationPanel
from .scoredriver import PARAM_EQUI, PARAM_HYPER, CovarianceSnapshot, StaticParams

__version__ = "0.1.0"

__all__ = [
    "ObservationPanel", "StaticParams", "CovarianceSnapshot",
    "PARAM_HYPER", "PARAM_EQUI",
    "SdcovError", "NonInvertibleF", "DivergedFilter", "ParameterOverflow",
    "SingularCovariance", "InsufficientPresample", "UnknownPattern",
    "EmptySeries", "DegenerateReturns", "LengthMismatch", "ParseError",
    "NonPositivePrice", "EmptyFile", "IoError",
    "__version__",
]
