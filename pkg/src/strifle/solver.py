"""Weighted penalized GLM fitting by proximal gradient, plus K-fold CV over a lambda path.

The composite objective is

    F(b) = (1/n) sum_i w_i {G(eta_i) - y_i eta_i} + sum_{j in mask} p_lam(b_j),
    eta = X b + offset,

minimized by an accelerated proximal gradient method with backtracking
line search and function-value restarts, which keeps the objective
trace monotone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .glm import as_link
from .penalty import PenaltySpec, penalty_total, prox_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-8
    max_iter: int = 10000
    step0: float = 1.0
    backtrack: float = 0.5
    l1_radius: Optional[float] = None
    accelerate: bool = True
    # stop also requires the gradient-mapping norm below grad_tol * (1 + |b|)
    grad_tol: Optional[float] = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if not self.step0 > 0:
            raise ValueError("step0 must be positive")
        if self.l1_radius is not None and not self.l1_radius > 0:
            raise ValueError("l1_radius must be positive")


@dataclass
class FitResult:
    coef: np.ndarray
    objective: float
    iterations: int
    converged: bool
    lam: float
    step: float = 1.0
    trace: list = field(default_factory=list, repr=False)


def default_mask(d, intercept=True) -> np.ndarray:
    m = np.ones(d, dtype=bool)
    if intercept and d:
        m[0] = False
    return m


def _resolve_penalty(penalty: PenaltySpec, d) -> PenaltySpec:
    if penalty.mask is None:
        return penalty.with_mask(default_mask(d))
    penalty.mask_array(d)
    return penalty


def project_l1(v, radius, mask):
    """Euclidean projection of the masked coordinates of ``v`` onto an l1 ball."""
    x = v[mask]
    if np.sum(np.abs(x)) <= radius:
        return v
    u = np.sort(np.abs(x))[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    out = v.copy()
    out[mask] = np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)
    return out


class _Problem:
    """Smooth part of the objective with cached linear predictors."""

    def __init__(self, X, y, w, link, offset):
        self.X = X
        self.y = y
        self.w = w
        self.link = link
        self.offset = offset
        self.n = X.shape[0]

    def eta(self, b):
        return self.X @ b + self.offset

    def loss_eta(self, eta):
        return float(np.sum(self.w * (self.link.cumulant(eta) - self.y * eta)) / self.n)

    def grad_eta(self, eta):
        return self.X.T @ (self.w * (self.link.mean(eta) - self.y)) / self.n


def _validate(design, response, weights, offset):
    X = np.asarray(design, dtype=float)
    if X.ndim != 2:
        raise ValueError("design must be 2-d")
    n, d = X.shape
    y = np.asarray(response, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"response has shape {y.shape}, expected ({n},)")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights have shape {w.shape}, expected ({n},)")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if off.shape != (n,):
        raise ValueError(f"offset has shape {off.shape}, expected ({n},)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(off))):
        raise ValueError("design, response and offset must be finite")
    return X, y, w, off


def fit_penalized(
    design,
    response,
    weights=None,
    link="logit",
    penalty: PenaltySpec = PenaltySpec(),
    config: FitConfig = FitConfig(),
    warm=None,
    offset=None,
    step=None,
) -> FitResult:
    """Minimize the weighted penalized negative quasi-likelihood.

    Parameters
    ----------
    design : (n, d) array
        Column 0 is treated as the intercept when ``penalty.mask`` is unset.
    response, weights, offset : (n,) arrays
        ``weights`` default to one, ``offset`` to zero.
    penalty : PenaltySpec
    config : FitConfig
    warm : (d,) array, optional
        Starting point.
    step : float, optional
        Initial step size; overrides ``config.step0`` (used to carry the
        accepted step along a lambda path).

    Returns
    -------
    FitResult
        ``converged`` is true when the relative objective change and the
        gradient-mapping norm both fall below their tolerances.
    """
    link = as_link(link)
    X, y, w, off = _validate(design, response, weights, offset)
    n, d = X.shape
    pen = _resolve_penalty(penalty, d)
    mask = pen.mask_array(d)
    prob = _Problem(X, y, w, link, off)

    x = np.zeros(d) if warm is None else np.array(warm, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"warm start has shape {x.shape}, expected ({d},)")
    if config.l1_radius is not None:
        x = project_l1(x, config.l1_radius, mask)

    s = config.step0 if step is None else float(step)
    if pen.mu > 0:
        s = min(s, 0.99 / pen.mu)

    eta_x = prob.eta(x)
    F_x = prob.loss_eta(eta_x) + penalty_total(x, pen)
    if not np.isfinite(F_x):
        raise FloatingPointError("objective is not finite at the starting point")
    trace = [F_x]
    if n == 0:
        return FitResult(x, F_x, 0, True, pen.lam, s, trace)

    y_pt, eta_y = x.copy(), eta_x.copy()
    x_prev, eta_prev = x.copy(), eta_x.copy()
    t = 1.0
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        if it % 10 == 0:
            s = s / config.backtrack
            if pen.mu > 0:
                s = min(s, 0.99 / pen.mu)
        f_y = prob.loss_eta(eta_y)
        g_y = prob.grad_eta(eta_y)
        while True:
            z = prox_step(y_pt - s * g_y, s, pen)
            if config.l1_radius is not None:
                z = project_l1(z, config.l1_radius, mask)
            eta_z = prob.eta(z)
            f_z = prob.loss_eta(eta_z)
            diff = z - y_pt
            if np.isfinite(f_z) and f_z <= f_y + g_y @ diff + diff @ diff / (2 * s) + 1e-12 * abs(f_y):
                break
            s *= config.backtrack
            if s < 1e-20:
                raise FloatingPointError("line search failed: step size underflow")
        F_z = f_z + penalty_total(z, pen)
        if not np.isfinite(F_z):
            raise FloatingPointError("objective diverged")
        gmap = np.sqrt(diff @ diff) / s

        if F_z <= F_x:
            rel = (F_x - F_z) / max(1.0, abs(F_x))
            x_prev, eta_prev = x, eta_x
            x, eta_x, F_x = z, eta_z, F_z
            trace.append(F_x)
            small_grad = config.grad_tol is None or gmap <= config.grad_tol * (1.0 + np.sqrt(x @ x))
            if rel < config.tol and small_grad:
                converged = True
                break
            if config.accelerate:
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                beta = (t - 1.0) / t_new
                y_pt = x + beta * (x - x_prev)
                eta_y = eta_x + beta * (eta_x - eta_prev)
                t = t_new
            else:
                y_pt, eta_y = x, eta_x
        else:
            # momentum overshoot: restart from the last accepted iterate
            trace.append(F_x)
            if t == 1.0 or not config.accelerate:
                # a plain prox step cannot increase F beyond rounding error
                converged = True
                break
            t = 1.0
            y_pt, eta_y = x.copy(), eta_x.copy()

    if not converged:
        logger.debug("fit_penalized hit max_iter=%d (lam=%.4g)", config.max_iter, pen.lam)
    return FitResult(x, F_x, it, converged, pen.lam, s, trace)


def gradient_mapping_norm(design, response, weights, link, penalty, coef, step=1.0, offset=None) -> float:
    """``|b - prox(b - s grad f(b))| / s``; zero exactly at stationary points."""
    link = as_link(link)
    X, y, w, off = _validate(design, response, weights, offset)
    pen = _resolve_penalty(penalty, X.shape[1])
    prob = _Problem(X, y, w, link, off)
    coef = np.asarray(coef, dtype=float)
    g = prob.grad_eta(prob.eta(coef))
    return float(np.linalg.norm(coef - prox_step(coef - step * g, step, pen)) / step)


def null_fit(design, response, weights, link, penalty, config=FitConfig(), offset=None) -> np.ndarray:
    """Fit only the unpenalized coordinates (all penalized ones held at 0)."""
    X, y, w, off = _validate(design, response, weights, offset)
    d = X.shape[1]
    mask = _resolve_penalty(penalty, d).mask_array(d)
    coef = np.zeros(d)
    free = ~mask
    if free.any() and X.shape[0]:
        sub = fit_penalized(
            X[:, free], y, w, link, PenaltySpec("lasso", 0.0, mask=np.zeros(free.sum(), bool)), config, offset=off
        )
        coef[free] = sub.coef
    return coef


def lambda_max(design, response, weights=None, link="logit", penalty=PenaltySpec(), offset=None, config=FitConfig()):
    """Smallest lambda at which every penalized coefficient is zero (lasso-type slope at 0)."""
    link = as_link(link)
    X, y, w, off = _validate(design, response, weights, offset)
    d = X.shape[1]
    pen = _resolve_penalty(penalty, d)
    mask = pen.mask_array(d)
    if not mask.any() or X.shape[0] == 0:
        return 0.0
    b0 = null_fit(X, y, w, link, pen, config, off)
    prob = _Problem(X, y, w, link, off)
    g = prob.grad_eta(prob.eta(b0))
    return float(np.max(np.abs(g[mask])))


def lambda_grid(lmax, n_lambda=50, ratio=0.01) -> np.ndarray:
    """Log-spaced grid from ``lmax`` down to ``ratio * lmax`` (descending)."""
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, ratio * lmax, n_lambda)


def fit_path(design, response, weights, link, penalty, lambdas, config=FitConfig(), offset=None, warm=None, screen=True):
    """Warm-started fits along a descending lambda sequence.

    With ``screen`` (sparsity-inducing penalties only) each fit runs on the
    columns kept by the sequential strong rule; excluded columns are then
    checked against the zero-subgradient condition ``|grad_j| <= lam`` and any
    violators are added back before refitting, so the result solves the full
    problem.
    """
    link = as_link(link)
    X, y, w, off = _validate(design, response, weights, offset)
    n, d = X.shape
    pen = _resolve_penalty(penalty, d)
    mask = pen.mask_array(d)
    lambdas = [float(l) for l in lambdas]
    use_screen = screen and pen.family != "ridge" and config.l1_radius is None and n > 0 and d > 1
    if not use_screen:
        fits, coef, step = [], warm, None
        for lam in lambdas:
            res = fit_penalized(X, y, w, link, pen.with_lam(lam), config, warm=coef, offset=off, step=step)
            coef, step = res.coef, res.step
            fits.append(res)
        return fits

    prob = _Problem(X, y, w, link, off)
    coef = np.zeros(d) if warm is None else np.array(warm, dtype=float)
    g = prob.grad_eta(prob.eta(coef))
    lam_prev = lambdas[0] if lambdas else 0.0
    step = None
    fits = []
    for lam in lambdas:
        keep = ~mask | (coef != 0) | (np.abs(g) >= 2 * lam - lam_prev)
        while True:
            sub_pen = pen.with_lam(lam).with_mask(mask[keep])
            res = fit_penalized(X[:, keep], y, w, link, sub_pen, config, warm=coef[keep], offset=off, step=step)
            coef = np.zeros(d)
            coef[keep] = res.coef
            g = prob.grad_eta(prob.eta(coef))
            viol = mask & ~keep & (np.abs(g) > lam * (1 + 1e-9))
            if not viol.any():
                break
            keep = keep | viol
        step = res.step
        fits.append(FitResult(coef, res.objective, res.iterations, res.converged, lam, res.step, res.trace))
        lam_prev = lam
    return fits


def kfold_indices(n, folds, seed):
    """Random partition of ``range(n)`` into ``folds`` nearly equal parts."""
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if n < folds:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cv_select_lambda(
    design,
    response,
    weights=None,
    link="logit",
    penalty_family: PenaltySpec = PenaltySpec(),
    lambda_grid=None,
    folds=5,
    seed=0,
    config=FitConfig(),
    offset=None,
):
    """K-fold cross-validation of lambda by held-out weighted negative quasi-likelihood.

    Returns ``(lambda, cv_curve)``; ties go to the smallest lambda.
    """
    link = as_link(link)
    X, y, w, off = _validate(design, response, weights, offset)
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("lambda grid must be a nonempty 1-d array")
    if np.any(np.diff(grid) > 0):
        raise ValueError("lambda grid must be sorted in descending order")
    pen = _resolve_penalty(penalty_family, X.shape[1])
    if grid.size == 1:
        return float(grid[0]), np.zeros(1)
    parts = kfold_indices(X.shape[0], folds, seed)
    losses = np.empty((len(parts), grid.size))
    for k, test in enumerate(parts):
        if w[test].sum() <= 0:
            raise ValueError(f"fold {k} has zero total weight")
        train = np.setdiff1d(np.arange(X.shape[0]), test, assume_unique=True)
        fits = fit_path(X[train], y[train], w[train], link, pen, grid, config, offset=off[train])
        held = _Problem(X[test], y[test], w[test], link, off[test])
        for j, res in enumerate(fits):
            losses[k, j] = held.loss_eta(held.eta(res.coef))
    curve = losses.mean(axis=0)
    best = np.flatnonzero(curve <= curve.min())
    j = best[-1]
    return float(grid[j]), curve


@dataclass
class CVConfig:
    """Tuning rule for one penalized fit.

    ``lam`` fixes lambda and skips cross-validation.
    """

    folds: int = 5
    n_lambda: int = 50
    ratio: float = 0.01
    seed: int = 0
    lam: Optional[float] = None
    solver: FitConfig = field(default_factory=FitConfig)

    def reseeded(self, seed) -> "CVConfig":
        return replace(self, seed=int(seed))


@dataclass
class TunedFit:
    fit: FitResult
    lam: float
    grid: np.ndarray
    cv_curve: np.ndarray

    @property
    def coef(self):
        return self.fit.coef


def fit_cv(design, response, weights=None, link="logit", penalty=PenaltySpec(), cv: CVConfig = CVConfig(), offset=None) -> TunedFit:
    """Choose lambda by K-fold CV on a lambda_max-anchored grid, then refit on all rows.

    The final fit follows the same warm-started path down to the selected lambda.
    """
    X, y, w, off = _validate(design, response, weights, offset)
    pen = _resolve_penalty(penalty, X.shape[1])
    if cv.lam is not None:
        res = fit_penalized(X, y, w, link, pen.with_lam(cv.lam), cv.solver, offset=off)
        return TunedFit(res, float(cv.lam), np.array([cv.lam]), np.zeros(1))
    lmax = lambda_max(X, y, w, link, pen, off, cv.solver)
    grid = lambda_grid(lmax, cv.n_lambda, cv.ratio)
    lam, curve = cv_select_lambda(X, y, w, link, pen, grid, cv.folds, cv.seed, cv.solver, off)
    path = grid[grid >= lam]
    res = fit_path(X, y, w, link, pen, path, cv.solver, offset=off)[-1]
    return TunedFit(res, lam, grid, curve)
