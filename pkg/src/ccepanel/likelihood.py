"""Model families and derivatives of the log density in the single index.

Every supported family is driven by a scalar index z (the sum of the
regression part and the interactive-effect part).  This module evaluates
the log density log L(y, z) and its first four derivatives with respect
to z, which feed the optimizer, the bias formulas, and the variance
estimators.  All functions broadcast over numpy arrays.

Families
--------
logit     binary y, G(z) = exp(z) / (1 + exp(z))
probit    binary y, G(z) = standard normal CDF
poisson   count y, intensity equal to the index itself (requires z > 0)
gaussian  real y, least-squares objective -(y - z)^2
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy import special

from .exceptions import InvalidInputError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Family(enum.Enum):
    """Supported model families, selectable by name on the CLI."""

    LOGIT = "logit"
    PROBIT = "probit"
    POISSON = "poisson"
    GAUSSIAN = "gaussian"

    @classmethod
    def from_string(cls, name: str) -> "Family":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise InvalidInputError(
                f"unknown family {name!r}; expected one of: {valid}"
            ) from None

    @property
    def is_binary(self) -> bool:
        return self in (Family.LOGIT, Family.PROBIT)


def validate_outcomes(family: Family, y: np.ndarray) -> None:
    """Raise ``InvalidInputError`` if outcomes are outside the family domain."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("outcomes must be finite")
    if family.is_binary:
        if not np.all((y == 0.0) | (y == 1.0)):
            raise InvalidInputError(
                f"{family.value} outcomes must lie in {{0, 1}}"
            )
    elif family is Family.POISSON:
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise InvalidInputError(
                "poisson outcomes must be non-negative integers"
            )
    # gaussian accepts any real outcome


def validate_index(family: Family, z: np.ndarray) -> None:
    """Raise if any index value is outside the family domain (poisson: z > 0)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("index values must be finite")
    if family is Family.POISSON and np.any(z <= 0.0):
        raise InvalidInputError(
            "poisson requires a strictly positive index (z > 0)"
        )


def index_in_domain(family: Family, z: np.ndarray) -> bool:
    """Fast domain predicate used by line searches (no exception)."""
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        return False
    if family is Family.POISSON:
        return bool(np.all(z > 0.0))
    return True


# --------------------------------------------------------------------- #
# probit helpers: derivatives of log Phi via the hazard h = phi / Phi.
# h satisfies h' = -z h - h^2, so higher orders follow by recursion; the
# log-CDF is evaluated with log_ndtr so the tails (|z| > 6) stay accurate.
# --------------------------------------------------------------------- #


def _norm_logpdf(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


def _probit_hazard(z):
    return np.exp(_norm_logpdf(z) - special.log_ndtr(z))


def _logphi_derivs(z, order: int):
    """Derivatives of log Phi(z) up to ``order`` (returns the last one)."""
    h = _probit_hazard(z)
    if order == 1:
        return h
    d2 = -h * (z + h)
    if order == 2:
        return d2
    d3 = -h - (z + 2.0 * h) * d2
    if order == 3:
        return d3
    return -2.0 * d2 - 2.0 * d2 * d2 - (z + 2.0 * h) * d3


# --------------------------------------------------------------------- #
# log density and index derivatives
# --------------------------------------------------------------------- #


def log_density(family: Family, y, z):
    """Log density log L(y, z) of the outcome given the index.

    Parameters
    ----------
    family : Family
    y : scalar or ndarray
        Outcomes, in the family's domain.
    z : scalar or ndarray
        Index values, broadcastable against ``y``.

    Returns
    -------
    scalar or ndarray of log-density values.
    """
    y_arr = np.asarray(y, dtype=float)
    z_arr = np.asarray(z, dtype=float)
    validate_outcomes(family, y_arr)
    validate_index(family, z_arr)
    out = _log_density_unchecked(family, y_arr, z_arr)
    return out if out.ndim else float(out)


def _log_density_unchecked(family: Family, y, z):
    if family is Family.LOGIT:
        # log G(z) = log_expit(z), log(1 - G(z)) = log_expit(-z)
        return np.asarray(
            y * special.log_expit(z) + (1.0 - y) * special.log_expit(-z)
        )
    if family is Family.PROBIT:
        return np.asarray(
            y * special.log_ndtr(z) + (1.0 - y) * special.log_ndtr(-z)
        )
    if family is Family.POISSON:
        return np.asarray(y * np.log(z) - z - special.gammaln(y + 1.0))
    return np.asarray(-((y - z) ** 2))


def index_derivative(family: Family, y, z, order: int):
    """Analytic d^order/dz^order of log L(y, z), order in 1..4."""
    if order not in (1, 2, 3, 4):
        raise InvalidInputError(f"derivative order must be in 1..4, got {order}")
    y_arr = np.asarray(y, dtype=float)
    z_arr = np.asarray(z, dtype=float)
    validate_outcomes(family, y_arr)
    validate_index(family, z_arr)
    out = _index_derivative_unchecked(family, y_arr, z_arr, order)
    out = np.asarray(out)
    return out if out.ndim else float(out)


def _index_derivative_unchecked(family: Family, y, z, order: int):
    if family is Family.LOGIT:
        G = special.expit(z)
        if order == 1:
            return y - G
        g = G * (1.0 - G)
        if order == 2:
            return -g
        if order == 3:
            return -g * (1.0 - 2.0 * G)
        return -(g * (1.0 - 2.0 * G) ** 2 - 2.0 * g * g)
    if family is Family.PROBIT:
        # l(1, z) = log Phi(z), l(0, z) = log Phi(-z); combine both branches
        # through the symmetry d^j/dz^j log Phi(-z) = (-1)^j psi_j(-z).
        pos = _logphi_derivs(z, order)
        neg = _logphi_derivs(-z, order) * ((-1.0) ** order)
        return y * pos + (1.0 - y) * neg
    if family is Family.POISSON:
        if order == 1:
            return y / z - 1.0
        if order == 2:
            return -y / z**2
        if order == 3:
            return 2.0 * y / z**3
        return -6.0 * y / z**4
    # gaussian: -(y - z)^2
    shape = np.broadcast_shapes(np.shape(y), np.shape(z))
    if order == 1:
        return 2.0 * (y - z)
    if order == 2:
        return np.full(shape, -2.0)
    return np.zeros(shape)


# --------------------------------------------------------------------- #
# response curve: the conditional mean of y as a function of the index,
# and its derivatives.  Partial effects are differences of this curve.
# --------------------------------------------------------------------- #


def response_mean(family: Family, z):
    """E[y | index = z]: the CDF for binary families, the index itself otherwise."""
    z = np.asarray(z, dtype=float)
    if family is Family.LOGIT:
        return special.expit(z)
    if family is Family.PROBIT:
        return special.ndtr(z)
    return z


def response_mean_deriv(family: Family, z, order: int):
    """d^order/dz^order of the response curve, order in 1..3.

    For the binary families this is g, g', g''; for poisson and gaussian
    the curve is linear so the first derivative is 1 and higher ones are 0.
    """
    if order not in (1, 2, 3):
        raise InvalidInputError(f"response derivative order must be in 1..3, got {order}")
    z = np.asarray(z, dtype=float)
    if family is Family.LOGIT:
        G = special.expit(z)
        g = G * (1.0 - G)
        if order == 1:
            return g
        if order == 2:
            return g * (1.0 - 2.0 * G)
        return g * (1.0 - 2.0 * G) ** 2 - 2.0 * g * g
    if family is Family.PROBIT:
        phi = np.exp(_norm_logpdf(z))
        if order == 1:
            return phi
        if order == 2:
            return -z * phi
        return (z * z - 1.0) * phi
    if order == 1:
        return np.ones_like(z)
    return np.zeros_like(z)
