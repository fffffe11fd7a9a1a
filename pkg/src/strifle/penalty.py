"""Lasso, ridge, SCAD and MCP penalties: values, derivatives and proximal maps.

All functions act componentwise. A :class:`PenaltySpec` carries an optional
boolean ``mask``; unmasked coordinates (by convention the intercept) are
neither penalized nor shrunk.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

FAMILIES = ("lasso", "ridge", "scad", "mcp")


@dataclass(frozen=True)
class PenaltySpec:
    family: str = "lasso"
    lam: float = 0.0
    a: float = 3.7
    gamma: float = 3.0
    mask: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}; expected one of {FAMILIES}")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError("lam must be a finite nonnegative number")
        if self.family == "scad" and not self.a > 2:
            raise ValueError("SCAD requires a > 2")
        if self.family == "mcp" and not self.gamma > 1:
            raise ValueError("MCP requires gamma > 1")
        if self.mask is not None:
            object.__setattr__(self, "mask", tuple(bool(m) for m in self.mask))

    def with_lam(self, lam) -> "PenaltySpec":
        return replace(self, lam=float(lam))

    def with_mask(self, mask) -> "PenaltySpec":
        return replace(self, mask=None if mask is None else tuple(bool(m) for m in mask))

    @property
    def mu(self) -> float:
        """Weak-convexity constant: p(t) + mu t^2 / 2 is convex."""
        if self.family == "scad":
            return 1.0 / (self.a - 1.0)
        if self.family == "mcp":
            return 1.0 / self.gamma
        return 0.0

    @property
    def slope_at_zero(self) -> float:
        """``L`` in ``p'(0+) = lam * L``; ridge has zero slope at the origin."""
        return 0.0 if self.family == "ridge" else 1.0

    @property
    def is_convex(self) -> bool:
        return self.family in ("lasso", "ridge")

    def mask_array(self, d) -> np.ndarray:
        if self.mask is None:
            return np.ones(d, dtype=bool)
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (d,):
            raise ValueError(f"penalty mask has length {m.size}, expected {d}")
        return m


def penalty_value(t, spec: PenaltySpec):
    """Scalar penalty ``p_lam(t)`` applied elementwise."""
    t = np.abs(np.asarray(t, dtype=float))
    lam = spec.lam
    if spec.family == "lasso":
        out = lam * t
    elif spec.family == "ridge":
        out = lam * t * t
    elif spec.family == "scad":
        a = spec.a
        out = np.where(
            t <= lam,
            lam * t,
            np.where(
                t <= a * lam,
                (2 * a * lam * t - t * t - lam * lam) / (2 * (a - 1)),
                (a + 1) * lam * lam / 2,
            ),
        )
    else:
        g = spec.gamma
        out = np.where(t <= g * lam, lam * t - t * t / (2 * g), g * lam * lam / 2)
    if out.ndim == 0:
        return float(out)
    return out


def penalty_total(coef, spec: PenaltySpec) -> float:
    """Sum of ``p_lam`` over the masked coordinates of ``coef``."""
    coef = np.asarray(coef, dtype=float)
    m = spec.mask_array(coef.size)
    if spec.lam == 0:
        return 0.0
    return float(np.sum(penalty_value(coef[m], spec)))


def penalty_derivative(t, spec: PenaltySpec):
    """``p'_lam(t)`` for ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("penalty_derivative is defined for t > 0 only")
    lam = spec.lam
    if spec.family == "lasso":
        out = np.full_like(t, lam)
    elif spec.family == "ridge":
        out = 2 * lam * t
    elif spec.family == "scad":
        a = spec.a
        out = np.where(t <= lam, lam, np.maximum(a * lam - t, 0.0) / (a - 1))
    else:
        out = np.maximum(lam - t / spec.gamma, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def _soft(v, thr):
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _prox_scalar_family(v, step, spec):
    lam = spec.lam
    if spec.family == "lasso":
        return _soft(v, step * lam)
    if spec.family == "ridge":
        return v / (1.0 + 2.0 * step * lam)
    av = np.abs(v)
    if spec.family == "scad":
        a = spec.a
        mid = np.sign(v) * ((a - 1) * av - step * a * lam) / (a - 1 - step)
        return np.where(av <= lam * (1 + step), _soft(v, step * lam), np.where(av <= a * lam, mid, v))
    g = spec.gamma
    mid = np.sign(v) * (av - step * lam) / (1 - step / g)
    return np.where(av <= step * lam, 0.0, np.where(av <= g * lam, mid, v))


def prox_step(v, step, spec: PenaltySpec):
    """Componentwise ``argmin_t (t - v)^2 / (2 step) + p_lam(t)`` on masked coordinates.

    Unmasked coordinates are returned unchanged. For SCAD and MCP the map is
    single-valued only when ``step * mu < 1``; otherwise ``ValueError``.
    """
    v = np.asarray(v, dtype=float)
    if not step > 0:
        raise ValueError("step must be positive")
    if step * spec.mu >= 1:
        raise ValueError(f"step * mu = {step * spec.mu:.3g} >= 1; prox of {spec.family} is not unique")
    if spec.lam == 0:
        return v.copy()
    if v.ndim == 0:
        return float(_prox_scalar_family(v, step, spec))
    out = v.copy()
    m = spec.mask_array(v.size)
    out[m] = _prox_scalar_family(v[m], step, spec)
    return out


def assumption2_check(spec: PenaltySpec, n_grid: int = 2001, rtol: float = 1e-10) -> dict:
    """Numerically check the regularity conditions a sparse penalty must satisfy.

    On a grid ``t in (0, 10 lam]``: ``p(0) = 0``, symmetry, monotonicity,
    ``p(t)/t`` nonincreasing, and convexity of ``p(t) + mu t^2 / 2``
    (nonnegative second differences on a uniform grid). Returns a dict of
    booleans keyed by condition name.
    """
    lam = spec.lam if spec.lam > 0 else 1.0
    s = spec.with_lam(lam)
    t = np.linspace(0.0, 10 * lam, n_grid)[1:]
    p = penalty_value(t, s)
    scale = max(1.0, float(np.max(np.abs(p))))
    tol = rtol * scale
    ratio = p / t
    full = np.linspace(-10 * lam, 10 * lam, 2 * n_grid - 1)
    h = full[1] - full[0]
    conv = penalty_value(full, s) + s.mu * full**2 / 2
    second = (conv[2:] - 2 * conv[1:-1] + conv[:-2]) / h**2
    return {
        "zero_at_origin": penalty_value(0.0, s) == 0.0,
        "symmetric": bool(np.allclose(penalty_value(-t, s), p, rtol=0, atol=tol)),
        "nondecreasing": bool(np.all(np.diff(p) >= -tol)),
        "ratio_nonincreasing": bool(np.all(np.diff(ratio) <= tol)),
        "weakly_convex": bool(np.all(second >= -1e-6 * max(1.0, lam))),
    }
