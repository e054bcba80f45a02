"""Split-panel jackknife bias correction.

The corrected estimate combines the full-panel estimate with estimates
from the two cross-section halves (all periods kept) and the two
contiguous time halves (all units kept):

    corrected = 3 * full - (half_n1 + half_n2) / 2 - (half_t1 + half_t2) / 2

Every subsample run repeats the complete two-step pipeline, including the
re-estimation of the factors from the subsample's own cross-sectional
averages; with an odd dimension the first half gets the extra row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ape import PolicyPair, ape_estimate
from .estimation import CceFit, FitOptions, fit_cce
from .exceptions import InvalidInputError
from .factors import estimate_factors
from .likelihood import Family
from .panel import Panel


@dataclass
class SpjResult:
    """Full, half-panel, and combined estimates, with convergence flags."""

    full: np.ndarray | float
    half_n: tuple
    half_t: tuple
    corrected: np.ndarray | float
    converged: bool
    failures: list = field(default_factory=list)


def spj_combine(full, half_n, half_t):
    """Exact jackknife combination of the five estimates."""
    out = 3.0 * np.asarray(full) - 0.5 * (
        np.asarray(half_n[0]) + np.asarray(half_n[1])
    ) - 0.5 * (np.asarray(half_t[0]) + np.asarray(half_t[1]))
    return float(out) if np.ndim(out) == 0 else out


def split_half_panels(panel: Panel):
    """The four half panels: two unit halves, two contiguous period halves."""
    n, t = panel.n_units, panel.n_periods
    if n < 4 or t < 4:
        raise InvalidInputError(
            f"split-panel jackknife needs N >= 4 and T >= 4, got N={n}, T={t}"
        )
    n_cut = (n + 1) // 2
    t_cut = (t + 1) // 2
    return (
        (panel.subpanel(units=slice(0, n_cut)), panel.subpanel(units=slice(n_cut, n))),
        (panel.subpanel(periods=slice(0, t_cut)), panel.subpanel(periods=slice(t_cut, t))),
    )


def _pipeline(panel: Panel, family: Family, r: int, opts, policy):
    fe = estimate_factors(panel, r)
    fit = fit_cce(panel, fe, family, opts)
    if policy is None:
        return fit.beta, fit.converged
    return ape_estimate(fit, fe, family, policy).value, fit.converged


def _spj(panel: Panel, family: Family, r: int, opts, policy, full_stat=None):
    (n1, n2), (t1, t2) = split_half_panels(panel)
    failures = []
    if full_stat is None:
        full_stat, ok = _pipeline(panel, family, r, opts, policy)
        if not ok:
            failures.append("full")
    stats = []
    for name, sub in (("units-1", n1), ("units-2", n2), ("periods-1", t1), ("periods-2", t2)):
        stat, ok = _pipeline(sub, family, r, opts, policy)
        if not ok:
            failures.append(name)
        stats.append(stat)
    half_n = (stats[0], stats[1])
    half_t = (stats[2], stats[3])
    return SpjResult(
        full=full_stat,
        half_n=half_n,
        half_t=half_t,
        corrected=spj_combine(full_stat, half_n, half_t),
        converged=not failures,
        failures=failures,
    )


def spj_correct_beta(
    panel: Panel, family: Family, r: int, opts: FitOptions | None = None,
    full_fit: CceFit | None = None,
) -> SpjResult:
    """Jackknife-corrected coefficient vector.

    ``full_fit`` lets callers that already fitted the full panel skip the
    duplicate run; the subsample pipelines always run from scratch.
    """
    full_stat = None
    if full_fit is not None:
        full_stat = full_fit.beta
        if not full_fit.converged:
            res = _spj(panel, family, r, opts, None, full_stat=full_stat)
            res.failures.insert(0, "full")
            res.converged = False
            return res
    return _spj(panel, family, r, opts, None, full_stat=full_stat)


def spj_correct_ape(
    panel: Panel,
    family: Family,
    r: int,
    policy: PolicyPair,
    opts: FitOptions | None = None,
) -> SpjResult:
    """Jackknife-corrected average partial effect."""
    return _spj(panel, family, r, opts, policy)
