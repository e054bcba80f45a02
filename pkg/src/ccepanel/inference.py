"""HAC variance estimation and confidence intervals.

The coefficient covariance is the sandwich of the inverted curvature
matrix around a Bartlett-weighted long-run variance of the influence
scores; the APE variance applies the same kernel sum to the scalar APE
influence values.  The same bandwidth drives every kernel sum in the
package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .bias import ApeBiasComponents, BetaBiasComponents, kernel_lags
from .estimation import CceFit
from .exceptions import InvalidInputError, NumericalError
from .factors import FactorEstimate
from .likelihood import Family
from .panel import Panel


@dataclass
class InferenceResult:
    """Sandwich covariance, standard errors and normal-quantile intervals."""

    covariance: np.ndarray
    std_errors: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    bandwidth: int
    level: float
    ape_variance: float | None = None


def bartlett_weight(lag: int, bandwidth: int) -> float:
    """Triangular kernel weight at the given lag; bandwidth 0 keeps lag 0 only."""
    if bandwidth < 0:
        raise InvalidInputError(f"bandwidth must be non-negative, got {bandwidth}")
    lag = abs(int(lag))
    if bandwidth == 0:
        return 1.0 if lag == 0 else 0.0
    return max(0.0, 1.0 - lag / bandwidth)


def influence_scores(bias: BetaBiasComponents) -> np.ndarray:
    """Cellwise influence scores of the coefficient estimator, (N,T,k).

    Sum of the score in the projected-out regressor directions and the
    factor-estimation-error channel through the covariate idiosyncrasies.
    """
    correction = np.einsum("tkr,ntr->ntk", bias.C_t, bias.e_rot)
    return bias.l1[:, :, None] * bias.xdot + correction


def _kernel_outer_sum(values: np.ndarray, bandwidth: int) -> np.ndarray:
    """Bartlett-weighted sum over units and time pairs of outer products.

    ``values`` has shape (N,T,k); the result is the k x k sum over
    i, t, s of values_it values_is' k((t-s)/bandwidth).
    """
    t = values.shape[1]
    total = np.einsum("ntk,ntl->kl", values, values, optimize=True)
    for lag, w in kernel_lags(bandwidth, t):
        cross = np.einsum(
            "ntk,ntl->kl", values[:, : t - lag], values[:, lag:], optimize=True
        )
        total += w * (cross + cross.T)
    return total


def beta_covariance(
    panel: Panel,
    fit: CceFit,
    factors: FactorEstimate,
    family: Family,
    bias: BetaBiasComponents,
    bandwidth: int,
    level: float = 0.95,
    point: np.ndarray | None = None,
) -> InferenceResult:
    """Sandwich covariance of the coefficients and level-alpha intervals.

    Intervals are centered on ``point`` (the bias-corrected estimate when
    one is supplied; the raw estimate otherwise).
    """
    n, t = panel.outcomes.shape
    w = influence_scores(bias)
    omega = _kernel_outer_sum(w, bandwidth) / (n * t)
    omega = 0.5 * (omega + omega.T)  # purge rounding asymmetry
    try:
        half = np.linalg.solve(bias.Delta, omega)
        cov = np.linalg.solve(bias.Delta, half.T).T / (n * t)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"curvature matrix is singular: {exc}") from exc
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.maximum(np.diagonal(cov), 0.0))
    center = fit.beta if point is None else np.asarray(point, dtype=float)
    lo, hi = confidence_interval(center, se, level)
    return InferenceResult(
        covariance=cov,
        std_errors=se,
        ci_lower=lo,
        ci_upper=hi,
        bandwidth=bandwidth,
        level=level,
    )


def ape_variance(
    panel: Panel,
    fit: CceFit,
    factors: FactorEstimate,
    family: Family,
    bias: BetaBiasComponents,
    ape_bias: ApeBiasComponents,
    bandwidth: int,
) -> float:
    """Long-run variance of the APE influence values (the APE standard
    error is sqrt of this divided by N*T)."""
    n, t = panel.outcomes.shape
    w = influence_scores(bias)
    try:
        gd = np.linalg.solve(bias.Delta, ape_bias.gamma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"curvature matrix is singular: {exc}") from exc
    rf_minus_gt = np.einsum("trq,tq->tr", ape_bias.R_t, factors.factors) - ape_bias.gamma_t
    v = (
        np.einsum("k,ntk->nt", gd, w)
        + np.einsum("tr,ntr->nt", rf_minus_gt, bias.e_rot)
        + bias.l1 * ape_bias.proj_if
    )
    total = float(np.sum(v * v))
    for lag, wgt in kernel_lags(bandwidth, t):
        total += 2.0 * wgt * float(np.sum(v[:, : t - lag] * v[:, lag:]))
    return max(total / (n * t), 0.0)


def confidence_interval(point, std_error, level: float):
    """Two-sided normal interval(s): point +/- z_(1+level)/2 * std_error."""
    if not 0.0 < level < 1.0:
        raise InvalidInputError(f"confidence level must be in (0, 1), got {level}")
    z = float(special.ndtri(0.5 * (1.0 + level)))
    point = np.asarray(point, dtype=float)
    std_error = np.asarray(std_error, dtype=float)
    lo = point - z * std_error
    hi = point + z * std_error
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi
