"""Second estimation step: joint MLE of coefficients and factor loadings.

Given estimated factors, the sample average log likelihood is maximized
over the common coefficient vector and one loading vector per unit by
block alternation: every unit's loading subproblem is solved by its own
damped Newton iteration (batched across units, each with its own
backtracking line search), then the coefficients take a Newton step whose
curvature matrix is the Schur complement of the loading blocks -- the
Hessian of the profile objective -- so the outer loop inherits Newton
convergence.  For logit, probit, and gaussian families the objective is
concave given the factors and the stationary point is the global maximum.

Loadings live in the box |lambda_ij| <= loading_bound.  Binary units whose
outcomes the index can perfectly separate push their loadings outward;
steps are capped per iteration, coordinates pinned at
the bound are frozen out of the Newton systems, and such units are
counted in ``bound_hits``.  The convergence test uses the bound-projected
score, so a fit with separated units can still converge in the KKT sense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InitializationError, InvalidInputError
from .factors import FactorEstimate
from .likelihood import (
    Family,
    _index_derivative_unchecked,
    _log_density_unchecked,
    index_in_domain,
    validate_outcomes,
)
from .panel import Panel

_ARMIJO = 1e-4
_STEP_CAP = 16.0  # max loading move per inner iteration, per coordinate
# Sufficient-increase tests run at objective values of order N*T; gains of a
# final Newton polish sit below the floating resolution of those sums, so the
# tests allow rounding-level slack instead of rejecting the step.
_EPS_SLACK = 64.0 * np.finfo(float).eps


@dataclass
class FitOptions:
    """Optimizer knobs; defaults suit panels up to a few hundred units/periods."""

    grad_tolerance: float = 1e-8
    max_iterations: int = 200
    loading_bound: float = 1e3
    step_halving_max: int = 50

    def __post_init__(self):
        for name in ("grad_tolerance", "max_iterations", "loading_bound", "step_halving_max"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"FitOptions.{name} must be positive")


@dataclass
class CceFit:
    """Converged (or best-effort) two-step fit.

    ``index`` is always consistent with (beta, loadings, factors) at
    read-back.  ``grad_norm`` is the sup-norm of the scaled score blocks
    (coefficients scaled by 1/(NT), each unit's loading block by 1/T),
    projected at active loading bounds.  ``objective_path`` records the
    average log likelihood after every accepted update phase.
    """

    beta: np.ndarray
    loadings: np.ndarray
    index: np.ndarray
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool
    bound_hits: int = 0
    objective_path: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class LoadingUpdate:
    """Result of a single-unit loading solve."""

    loading: np.ndarray
    converged: bool
    bound_hit: bool
    iterations: int


def _check_dimensions(panel: Panel, factors: FactorEstimate, beta, loadings):
    n, t, k = panel.covariates.shape
    f = factors.factors
    if f.shape[0] != t:
        raise InvalidInputError(f"factors have {f.shape[0]} periods but panel has {t}")
    beta = np.asarray(beta, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    if beta.shape != (k,):
        raise InvalidInputError(f"beta must have shape ({k},), got {beta.shape}")
    if loadings.shape != (n, factors.r):
        raise InvalidInputError(
            f"loadings must have shape ({n}, {factors.r}), got {loadings.shape}"
        )
    return beta, loadings


def objective(panel: Panel, factors: FactorEstimate, family: Family, beta, loadings) -> float:
    """Average log likelihood over all N*T cells at the given parameters."""
    beta, loadings = _check_dimensions(panel, factors, beta, loadings)
    validate_outcomes(family, panel.outcomes)
    z = panel.covariates @ beta + loadings @ factors.factors.T
    if family is Family.POISSON and np.any(z <= 0.0):
        i, t = np.argwhere(z <= 0.0)[0]
        raise InvalidInputError(
            f"poisson index non-positive at unit {i}, period {t} (z={z[i, t]:.6g})"
        )
    vals = _log_density_unchecked(family, panel.outcomes, z)
    return float(vals.mean())


def _solve_neg_definite(h, rhs):
    """Solve h a = rhs for (batched) negative-definite h, with ridge fallback."""
    try:
        out = np.linalg.solve(h, rhs)
        if np.all(np.isfinite(out)):
            return out
    except np.linalg.LinAlgError:
        pass
    diag = np.abs(np.diagonal(h, axis1=-2, axis2=-1)).max(axis=-1)
    ridge = 1e-10 * (1.0 + diag)
    eye = np.eye(h.shape[-1])
    h_reg = h - (ridge[..., None, None] * eye if h.ndim == 3 else ridge * eye)
    out = np.linalg.solve(h_reg, rhs)
    if not np.all(np.isfinite(out)):
        raise np.linalg.LinAlgError("non-finite newton direction")
    return out


def _frozen(lam, g, bound):
    """Loading coordinates pinned at the box bound with an outward score."""
    return ((lam >= bound) & (g > 0)) | ((lam <= -bound) & (g < 0))


def _freeze_system(h, g, frozen):
    """Remove frozen coordinates from the per-unit Newton systems in place."""
    if not frozen.any():
        return h, g
    g = np.where(frozen, 0.0, g)
    h = h.copy()
    mask_row = frozen[:, :, None] | frozen[:, None, :]
    h[mask_row] = 0.0
    r = h.shape[-1]
    idx = np.arange(r)
    diag = h[:, idx, idx]
    h[:, idx, idx] = np.where(frozen, -1.0, diag)
    return h, g


def _solve_loadings(family, y, z_base, f, lam, bound, tol, inner_max, halving_max):
    """Batched per-unit Newton for the loading subproblems at fixed beta.

    ``z_base`` is the covariate part of the index.  Units whose projected
    score meets the tolerance leave the active set, so late iterations
    only touch the stragglers (separated units crawling to the bound).
    Returns updated loadings, the per-cell index, per-unit objective sums,
    and the number of units whose line search stalled.
    """
    n, t = y.shape
    z = z_base + lam @ f.T
    obj = _log_density_unchecked(family, y, z).sum(axis=1)
    n_stalled = 0
    act = np.arange(n)
    rounds = 0

    for _ in range(inner_max):
        if act.size == 0:
            break
        rounds += 1
        ya = y[act]
        za = z[act]
        l1 = _index_derivative_unchecked(family, ya, za, 1)
        g = l1 @ f
        lama = lam[act]
        frozen = _frozen(lama, g, bound)
        g_proj = np.where(frozen, 0.0, g)
        live = np.abs(g_proj).max(axis=1) / t > tol
        if not live.all():
            act = act[live]
            if act.size == 0:
                break
            ya, za, lama = ya[live], za[live], lama[live]
            g, frozen, g_proj = g[live], frozen[live], g_proj[live]
        l2 = _index_derivative_unchecked(family, ya, za, 2)
        h = np.einsum("nt,tr,ts->nrs", l2, f, f, optimize=True)
        h, gf = _freeze_system(h, g, frozen)
        try:
            step = -_solve_neg_definite(h, gf[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = g_proj / t
        big = np.abs(step).max(axis=1)
        over = big > _STEP_CAP
        if over.any():
            step[over] *= (_STEP_CAP / big[over])[:, None]
        slope = np.sum(g_proj * step, axis=1)
        fallback = slope <= 0
        if fallback.any():
            step[fallback] = g_proj[fallback] / t
            slope[fallback] = np.sum(g_proj[fallback] * step[fallback], axis=1)

        alpha = np.ones(act.size)
        remaining = np.ones(act.size, dtype=bool)
        obj_a = obj[act]
        for _ in range(halving_max):
            rid = np.flatnonzero(remaining)
            if rid.size == 0:
                break
            trial = np.clip(lama[rid] + alpha[rid, None] * step[rid], -bound, bound)
            z_trial = z_base[act[rid]] + trial @ f.T
            obj_trial = _log_density_unchecked(family, ya[rid], z_trial).sum(axis=1)
            slack = _EPS_SLACK * (1.0 + np.abs(obj_a[rid]))
            ok = np.isfinite(obj_trial) & (
                obj_trial >= obj_a[rid] + _ARMIJO * alpha[rid] * slope[rid] - slack
            )
            if family is Family.POISSON:
                ok &= (z_trial > 0.0).all(axis=1)
            acc = rid[ok]
            lam[act[acc]] = trial[ok]
            z[act[acc]] = z_trial[ok]
            obj[act[acc]] = obj_trial[ok]
            remaining[acc] = False
            alpha[rid[~ok]] *= 0.5
        if remaining.any():
            n_stalled += int(remaining.sum())
            act = act[~remaining]

    return lam, z, obj, n_stalled, rounds


def _loading_grad_norm(l1, f, lam, bound, t):
    g = l1 @ f
    g = np.where(_frozen(lam, g, bound), 0.0, g)
    return float(np.abs(g).max()) / t if g.size else 0.0


def _pooled_beta(family: Family, y, x, opts: FitOptions) -> np.ndarray:
    """Coefficients from a no-loading pooled fit (deterministic warm start)."""
    n, t, k = x.shape
    if family is Family.GAUSSIAN:
        return np.linalg.lstsq(x.reshape(n * t, k), y.reshape(n * t), rcond=None)[0]
    beta = np.zeros(k)
    z = x @ beta
    obj = float(_log_density_unchecked(family, y, z).sum())
    for _ in range(50):
        l1 = _index_derivative_unchecked(family, y, z, 1)
        g = np.einsum("nt,ntk->k", l1, x)
        if np.max(np.abs(g)) / (n * t) <= 1e-6:
            break
        l2 = _index_derivative_unchecked(family, y, z, 2)
        h = np.einsum("nt,ntk,ntl->kl", l2, x, x, optimize=True)
        try:
            step = -_solve_neg_definite(h, g)
        except np.linalg.LinAlgError:
            step = g / (n * t)
        slope = float(g @ step)
        if slope <= 0:
            step, slope = g / (n * t), float(g @ g) / (n * t)
        alpha, accepted = 1.0, False
        for _ in range(opts.step_halving_max):
            cand = beta + alpha * step
            z_c = x @ cand
            obj_c = float(_log_density_unchecked(family, y, z_c).sum())
            slack = _EPS_SLACK * (1.0 + abs(obj))
            if np.isfinite(obj_c) and obj_c >= obj + _ARMIJO * alpha * slope - slack:
                beta, z, obj, accepted = cand, z_c, obj_c, True
                break
            alpha *= 0.5
        if not accepted:
            break
    return beta


def _poisson_feasible_loadings(y, f, margin):
    """Initial loadings with a strictly positive index everywhere (beta = 0).

    Starts from per-unit least squares of the outcomes on the factors and,
    if needed, shifts every unit along the direction whose factor
    projection is positive in all periods.
    """
    ftf = f.T @ f
    try:
        lam = np.linalg.solve(ftf, f.T @ y.T).T  # (N, r)
    except np.linalg.LinAlgError as exc:
        raise InitializationError(f"factor gram matrix is singular: {exc}") from exc
    z = lam @ f.T
    if np.all(z.min(axis=1) > margin):
        return lam
    shift_dir = np.linalg.solve(ftf, f.sum(axis=0))
    s = f @ shift_dir
    if s.min() <= 1e-8:
        raise InitializationError(
            "cannot construct a positive poisson index: no factor combination "
            "is positive in every period"
        )
    need = (margin - z) / s
    c = np.maximum(need.max(axis=1), 0.0)
    return lam + c[:, None] * shift_dir


def fit_cce(
    panel: Panel,
    factors: FactorEstimate,
    family: Family,
    opts: FitOptions | None = None,
) -> CceFit:
    """Maximize the average log likelihood over coefficients and loadings.

    Parameters
    ----------
    panel : Panel
    factors : FactorEstimate
        First-step factors; only ``factors.factors`` enters the objective.
    family : Family
    opts : FitOptions, optional

    Returns
    -------
    CceFit
        With ``converged=False`` (never an exception) when the iteration
        cap or line-search budget is exhausted.
    """
    opts = opts or FitOptions()
    y = panel.outcomes
    x = panel.covariates
    f = factors.factors
    n, t, k = x.shape
    r = factors.r
    if r > k:
        raise InvalidInputError(f"number of factors r={r} exceeds k={k}")
    if f.shape[0] != t:
        raise InvalidInputError("factors and panel disagree on the number of periods")
    validate_outcomes(family, y)

    bound = opts.loading_bound
    tol = opts.grad_tolerance
    if family is Family.POISSON:
        beta = np.zeros(k)
        margin = 1e-2 * (1.0 + float(y.mean()))
        lam = np.clip(_poisson_feasible_loadings(y, f, margin), -bound, bound)
        if not index_in_domain(family, x @ beta + lam @ f.T):
            raise InitializationError("poisson start is infeasible")
    else:
        beta = _pooled_beta(family, y, x, opts)
        lam = np.zeros((n, r))

    z_base = x @ beta
    path = [float(_log_density_unchecked(family, y, z_base + lam @ f.T).mean())]
    converged = False
    grad_norm = np.inf
    iterations = 0

    for _ in range(opts.max_iterations):
        lam, z, obj_units, _, _ = _solve_loadings(
            family, y, z_base, f, lam, bound, tol,
            inner_max=50, halving_max=opts.step_halving_max,
        )
        obj = float(obj_units.sum())
        path.append(obj / (n * t))

        l1 = _index_derivative_unchecked(family, y, z, 1)
        gb = np.einsum("nt,ntk->k", l1, x)
        grad_norm = max(
            float(np.abs(gb).max()) / (n * t),
            _loading_grad_norm(l1, f, lam, bound, t),
        )
        if grad_norm <= tol:
            converged = True
            break

        # profile Newton step for the coefficients
        l2 = _index_derivative_unchecked(family, y, z, 2)
        hb = np.einsum("nt,ntk,ntl->kl", l2, x, x, optimize=True)
        hbl = np.einsum("nt,ntk,tr->nkr", l2, x, f, optimize=True)
        hll = np.einsum("nt,tr,ts->nrs", l2, f, f, optimize=True)
        gl = l1 @ f
        frozen = _frozen(lam, gl, bound)
        if frozen.any():
            hbl = np.where(frozen[:, None, :], 0.0, hbl)
        hll, gl = _freeze_system(hll, gl, frozen)
        try:
            t1 = _solve_neg_definite(hll, hbl.transpose(0, 2, 1))  # Hll^-1 Hlb
            t2 = _solve_neg_definite(hll, gl[:, :, None])[:, :, 0]
            schur = hb - np.einsum("nkr,nrl->kl", hbl, t1)
            rhs = gb - np.einsum("nkr,nr->k", hbl, t2)
            db = -_solve_neg_definite(schur, rhs)
        except np.linalg.LinAlgError:
            break
        slope = float(gb @ db)
        if not np.isfinite(slope) or slope <= 0:
            db = gb / (n * t)
            slope = float(gb @ db)
            if slope <= 0:
                break
        dz = x @ db
        alpha, accepted = 1.0, False
        for _ in range(opts.step_halving_max):
            z_c = z + alpha * dz
            if index_in_domain(family, z_c):
                obj_c = float(_log_density_unchecked(family, y, z_c).sum())
                slack = _EPS_SLACK * (1.0 + abs(obj))
                if np.isfinite(obj_c) and obj_c >= obj + _ARMIJO * alpha * slope - slack:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        beta = beta + alpha * db
        z_base = z_base + alpha * dz
        iterations += 1
        path.append(obj_c / (n * t))

    index = x @ beta + lam @ f.T
    bound_hits = int(np.sum(np.any(np.abs(lam) >= bound, axis=1)))
    return CceFit(
        beta=beta,
        loadings=lam,
        index=index,
        loglik=float(_log_density_unchecked(family, y, index).mean()),
        grad_norm=float(grad_norm),
        iterations=iterations,
        converged=converged,
        bound_hits=bound_hits,
        objective_path=np.asarray(path),
    )


def update_loadings(
    unit_outcomes,
    unit_covariates,
    factors: FactorEstimate,
    family: Family,
    beta,
    lambda_init,
    opts: FitOptions | None = None,
) -> LoadingUpdate:
    """Newton solve of one unit's loading subproblem at fixed coefficients.

    Returns the box-projected stationary point; ``converged`` is False
    whenever the unprojected score stays large -- in particular when the
    loading bound is hit, the separation case.
    """
    opts = opts or FitOptions()
    y = np.asarray(unit_outcomes, dtype=float)
    x = np.asarray(unit_covariates, dtype=float)
    f = factors.factors
    beta = np.asarray(beta, dtype=float)
    if y.ndim != 1 or x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InvalidInputError("unit data must be a T-vector and a T x k matrix")
    validate_outcomes(family, y)
    t = y.shape[0]
    bound = opts.loading_bound
    lam = np.clip(np.asarray(lambda_init, dtype=float), -bound, bound)[None, :]
    z_base = (x @ beta)[None, :]
    if not index_in_domain(family, z_base + lam @ f.T):
        raise InitializationError("initial loading gives an out-of-domain index")

    lam = lam.copy()
    lam, z, _, _, rounds = _solve_loadings(
        family, y[None, :], z_base, f, lam, bound, opts.grad_tolerance,
        inner_max=opts.max_iterations, halving_max=opts.step_halving_max,
    )
    l1 = _index_derivative_unchecked(family, y[None, :], z, 1)
    raw_norm = float(np.abs(l1 @ f).max()) / t
    bound_hit = bool(np.any(np.abs(lam) >= bound))
    return LoadingUpdate(
        loading=lam[0],
        converged=raw_norm <= opts.grad_tolerance and not bound_hit,
        bound_hit=bound_hit,
        iterations=rounds,
    )
