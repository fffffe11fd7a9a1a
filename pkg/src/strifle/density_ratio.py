"""Exponential-tilt density-ratio model w(z) = exp{f(z)' zeta} fitted from unlabeled rows.

The fitting loss

    L(zeta) = mean_{source unlabeled} exp{f(z)' zeta} - mean_{target unlabeled} f(z)' zeta

is convex and smooth; its stationarity condition is exactly moment matching
of ``f`` between the reweighted source rows and the target rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .glm import StudyData
from .penalty import PenaltySpec, prox_step
from .solver import kfold_indices, lambda_grid

MAX_LINEAR_PREDICTOR = 700.0


class DensityRatioOverflow(OverflowError):
    """Raised instead of silently clipping an exponent beyond the safe range."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    """Feature map ``f``; ``"identity"`` uses ``f(z) = z``."""

    kind: Union[str, Callable] = "identity"
    name: str = "identity"

    def __call__(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if self.kind == "identity":
            return Z
        F = np.asarray(self.kind(Z), dtype=float)
        if F.ndim != 2 or F.shape[0] != Z.shape[0]:
            raise ValueError("basis map must return one row per input row")
        return F

    def dim(self, d) -> int:
        if self.kind == "identity":
            return d
        return self(np.zeros((1, d))).shape[1]


@dataclass
class DensityRatioFit:
    zeta: np.ndarray
    method: str
    loss: float
    support_size: int
    basis: BasisSpec = field(default_factory=BasisSpec)
    lam: float = 0.0
    iterations: int = 0

    def weights(self, Z) -> np.ndarray:
        """Importance weights for raw rows ``Z = (X, S)``."""
        return eval_weights(self, self.basis(Z))


def _linear(F, zeta, check=True):
    lp = F @ zeta
    if check and lp.size and np.max(lp) > MAX_LINEAR_PREDICTOR:
        raise DensityRatioOverflow(f"density-ratio exponent {np.max(lp):.1f} exceeds {MAX_LINEAR_PREDICTOR}")
    return lp


def dr_loss(zeta, source_unlabeled, target_unlabeled) -> float:
    """Exponential-tilt loss on basis-transformed source and target unlabeled rows."""
    zeta = np.asarray(zeta, dtype=float)
    FS = np.asarray(source_unlabeled, dtype=float)
    FT = np.asarray(target_unlabeled, dtype=float)
    if FS.shape[1] != zeta.size or FT.shape[1] != zeta.size:
        raise ValueError("zeta dimension does not match the basis")
    return float(np.mean(np.exp(_linear(FS, zeta))) - np.mean(FT @ zeta))


def dr_grad(zeta, source_unlabeled, target_unlabeled) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    FS = np.asarray(source_unlabeled, dtype=float)
    FT = np.asarray(target_unlabeled, dtype=float)
    e = np.exp(_linear(FS, zeta))
    return FS.T @ e / FS.shape[0] - FT.mean(axis=0)


def eval_weights(fit: DensityRatioFit, rows) -> np.ndarray:
    """``exp{f(z)' zeta}`` for basis-transformed rows."""
    F = np.asarray(rows, dtype=float)
    lp = F @ fit.zeta
    if lp.size and np.max(np.abs(lp)) > MAX_LINEAR_PREDICTOR:
        raise DensityRatioOverflow("density-ratio linear predictor outside [-700, 700]")
    return np.exp(lp)


def _unlabeled_features(data: StudyData, basis: BasisSpec):
    if data.N_S < 1 or data.N_T < 1:
        raise ValueError("density-ratio fitting needs unlabeled rows from both populations")
    return basis(data.source_unlabeled.Z), basis(data.target_unlabeled.Z)


def _constant_columns(FS, FT):
    return np.all(FS == 1.0, axis=0) & np.all(FT == 1.0, axis=0)


def _newton_ridge(FS, FT, ridge_lambda, tol=1e-10, max_iter=200):
    """Damped Newton for the ridge-penalized loss; returns (zeta, objective, iterations).

    Stops once half the squared Newton decrement falls below ``tol``.
    """
    d = FS.shape[1]
    mT = FT.mean(axis=0)
    nS = FS.shape[0]

    def obj(z):
        lp = FS @ z
        if np.max(lp) > MAX_LINEAR_PREDICTOR:
            return np.inf
        return np.mean(np.exp(lp)) - mT @ z + ridge_lambda * (z @ z)

    zeta = np.zeros(d)
    f = obj(zeta)
    for it in range(1, max_iter + 1):
        e = np.exp(FS @ zeta)
        g = FS.T @ e / nS - mT + 2 * ridge_lambda * zeta
        H = (FS * e[:, None]).T @ FS / nS + 2 * ridge_lambda * np.eye(d)
        try:
            direction = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            direction = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = g @ direction
        # half the squared Newton decrement bounds the remaining suboptimality
        if -slope / 2 <= tol:
            return zeta, f, it
        t = 1.0
        while True:
            cand = zeta + t * direction
            f_new = obj(cand)
            if f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("density-ratio line search stalled")
        zeta, f = cand, f_new
    raise ConvergenceError(f"density-ratio Newton iterations did not converge in {max_iter} steps")


def fit_dr_ridge_threshold(
    data: StudyData,
    basis: BasisSpec = BasisSpec(),
    ridge_lambda: float = 1e-5,
    cutoff_const: float = 10.0,
    tol: float = 1e-10,
) -> DensityRatioFit:
    """Ridge-stabilized fit followed by hard thresholding.

    Minimizes ``L(zeta) + ridge_lambda * |zeta|^2`` and zeroes every
    non-constant coordinate with ``|zeta_j| < cutoff_const * sqrt(log d / N)``.
    If any coordinate was zeroed, the constant-basis coefficient (when the basis
    has one) is re-solved so the source weights average to one.
    """
    FS, FT = _unlabeled_features(data, basis)
    zeta, _, iters = _newton_ridge(FS, FT, ridge_lambda, tol)
    d = FS.shape[1]
    const = _constant_columns(FS, FT)
    cutoff = cutoff_const * np.sqrt(np.log(d) / (FS.shape[0] + FT.shape[0])) if d > 1 else 0.0
    small = (np.abs(zeta) < cutoff) & ~const
    if small.any():
        zeta = np.where(small, 0.0, zeta)
        if const.any():
            j = np.flatnonzero(const)[0]
            zeta[const] = 0.0
            lp = FS @ zeta
            m = lp.max() if lp.size else 0.0
            zeta[j] = -(m + np.log(np.mean(np.exp(lp - m))))
    return DensityRatioFit(
        zeta=zeta,
        method="ridge_threshold",
        loss=dr_loss(zeta, FS, FT),
        support_size=int(np.count_nonzero(zeta)),
        basis=basis,
        lam=ridge_lambda,
        iterations=iters,
    )


def _pooled_lasso_parts(FS, FT):
    """Stacked rows with membership R (1 = source) in the single-sum form."""
    F = np.vstack([FS, FT])
    R = np.concatenate([np.ones(FS.shape[0]), np.zeros(FT.shape[0])])
    return F, R


def _pooled_value_grad(zeta, F, R, nS, nT):
    N = F.shape[0]
    lp = F @ zeta
    if lp.size and np.max(lp[R == 1], initial=-np.inf) > MAX_LINEAR_PREDICTOR:
        return np.inf, None
    e = np.where(R == 1, np.exp(np.where(R == 1, lp, 0.0)), 0.0)
    terms = (N / nS) * e + (R - 1.0) * (N / nT) * lp
    coefs = (N / nS) * e + (R - 1.0) * (N / nT)
    return float(terms.mean()), F.T @ coefs / N


def _lasso_path(F, R, nS, nT, pen, lambdas, tol, max_iter, warm=None):
    d = F.shape[1]
    zeta = np.zeros(d) if warm is None else warm.copy()
    out = []
    s = 1.0
    for lam in lambdas:
        p = pen.with_lam(lam)
        f, g = _pooled_value_grad(zeta, F, R, nS, nT)
        F_obj = f + lam * np.sum(np.abs(zeta[np.asarray(p.mask)]))
        it = 0
        for it in range(1, max_iter + 1):
            s = s * 2.0
            while True:
                cand = prox_step(zeta - s * g, s, p)
                f_c, g_c = _pooled_value_grad(cand, F, R, nS, nT)
                diff = cand - zeta
                if f_c <= f + g @ diff + diff @ diff / (2 * s):
                    break
                s *= 0.5
                if s < 1e-20:
                    raise ConvergenceError("density-ratio lasso line search failed")
            F_new = f_c + lam * np.sum(np.abs(cand[np.asarray(p.mask)]))
            done = abs(F_obj - F_new) <= tol * max(1.0, abs(F_obj)) and np.sqrt(diff @ diff) / s <= 1e-6
            zeta, f, g, F_obj = cand, f_c, g_c, F_new
            if done:
                break
        out.append((zeta.copy(), F_obj, it))
    return out


def fit_dr_lasso(
    data: StudyData,
    basis: BasisSpec = BasisSpec(),
    lambda_zeta: Union[float, str, None] = "cv",
    folds: int = 5,
    seed: int = 0,
    n_lambda: int = 50,
    tol: float = 1e-10,
    max_iter: int = 20000,
) -> DensityRatioFit:
    """l1-penalized fit of the tilt model via the pooled indicator-weighted objective.

    ``lambda_zeta`` is a number, ``"cv"`` (K-fold CV of the held-out tilt loss,
    folds drawn within each population) or ``"theory"`` for
    ``sqrt(log d / N_S)``. The constant basis column, if any, is unpenalized.
    """
    FS, FT = _unlabeled_features(data, basis)
    d = FS.shape[1]
    const = _constant_columns(FS, FT)
    pen = PenaltySpec("lasso", 0.0, mask=tuple(~const))
    F, R = _pooled_lasso_parts(FS, FT)
    nS, nT = FS.shape[0], FT.shape[0]

    if lambda_zeta is None or lambda_zeta == "theory":
        lam = float(np.sqrt(np.log(max(d, 2)) / nS))
    elif lambda_zeta == "cv":
        # null model: constant coefficient only, whose optimum is 0 when f contains a constant
        _, g0 = _pooled_value_grad(np.zeros(d), F, R, nS, nT)
        lmax = float(np.max(np.abs(g0[~const]))) if (~const).any() else 0.0
        grid = lambda_grid(lmax, n_lambda, 0.01)
        partsS = kfold_indices(nS, folds, seed)
        partsT = kfold_indices(nT, folds, seed + 1)
        curve = np.zeros(grid.size)
        for k in range(folds):
            trS = np.setdiff1d(np.arange(nS), partsS[k])
            trT = np.setdiff1d(np.arange(nT), partsT[k])
            Fk, Rk = _pooled_lasso_parts(FS[trS], FT[trT])
            path = _lasso_path(Fk, Rk, trS.size, trT.size, pen, grid, 1e-8, max_iter)
            for j, (z, _, _) in enumerate(path):
                curve[j] += dr_loss(z, FS[partsS[k]], FT[partsT[k]]) / folds
        lam = float(grid[np.flatnonzero(curve <= curve.min())[-1]])
    else:
        lam = float(lambda_zeta)

    zeta, obj, iters = _lasso_path(F, R, nS, nT, pen, [lam], tol, max_iter)[-1]
    return DensityRatioFit(
        zeta=zeta,
        method="lasso",
        loss=dr_loss(zeta, FS, FT),
        support_size=int(np.count_nonzero(zeta)),
        basis=basis,
        lam=lam,
        iterations=iters,
    )
