"""Observation containers and quasi-likelihood machinery for identity and logit links.

Every estimator in the package works with the quasi-log-likelihood

    Q{g(u), y} = y * u - G(u),

where ``g`` is the inverse link (mean function) and ``G`` its antiderivative.
For the logit link ``G(u) = log(1 + exp(u))``; this differs from the integral
of ``g`` over ``[0, u]`` by the constant ``log 2``, which does not move any
minimizer but does shift reported objective values by ``log 2`` per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

POPULATIONS = ("target", "source")
LINKS = ("identity", "logit")


def _log1pexp(u):
    # max(u, 0) + log1p(exp(-|u|)): the log1p-exp split at 0, overflow-free
    return np.logaddexp(0.0, np.asarray(u, dtype=float))


def _expit(u):
    return expit(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class LinkSpec:
    """Inverse link ``g``, its antiderivative ``G`` and derivative ``g'``."""

    kind: str = "logit"

    def __post_init__(self):
        if self.kind not in LINKS:
            raise ValueError(f"unknown link {self.kind!r}; expected one of {LINKS}")

    def mean(self, u):
        """g(u)."""
        if self.kind == "identity":
            return np.asarray(u, dtype=float)
        return _expit(u)

    def cumulant(self, u):
        """G(u)."""
        if self.kind == "identity":
            u = np.asarray(u, dtype=float)
            return 0.5 * u * u
        return _log1pexp(u)

    def mean_deriv(self, u):
        """g'(u)."""
        if self.kind == "identity":
            return np.ones_like(np.asarray(u, dtype=float))
        mu = _expit(u)
        return mu * (1.0 - mu)

    @property
    def deriv_bound(self) -> float:
        return 1.0 if self.kind == "identity" else 0.25


def as_link(link) -> LinkSpec:
    if isinstance(link, LinkSpec):
        return link
    return LinkSpec(link)


def quasi_loglik(u, y, link="logit"):
    """Elementwise ``y * u - G(u)``.

    Returns a float for scalar input and an array otherwise.
    """
    link = as_link(link)
    u_arr = np.asarray(u, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(u_arr)) and np.all(np.isfinite(y_arr))):
        raise ValueError("quasi_loglik requires finite linear predictor and response")
    out = y_arr * u_arr - link.cumulant(u_arr)
    if out.ndim == 0:
        return float(out)
    return out


def _check_rows(Z, y, coef, weights, offset):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2:
        raise ValueError("design must be a 2-d array")
    n, d = Z.shape
    coef = np.asarray(coef, dtype=float)
    if coef.shape != (d,):
        raise ValueError(f"coef has shape {coef.shape}, design has {d} columns")
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"response has shape {y.shape}, design has {n} rows")
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise ValueError(f"weights have shape {weights.shape}, design has {n} rows")
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if offset.shape != (n,):
        raise ValueError(f"offset has shape {offset.shape}, design has {n} rows")
    return Z, y, coef, weights, offset


def neg_quasi_loss(Z, y, coef, weights=None, link="logit", offset=None):
    """Weighted negative quasi-log-likelihood averaged over rows.

    ``(1/n) * sum_i w_i * {G(eta_i) - y_i * eta_i}`` with ``eta = Z @ coef + offset``.
    """
    link = as_link(link)
    Z, y, coef, weights, offset = _check_rows(Z, y, coef, weights, offset)
    if Z.shape[0] == 0:
        return 0.0
    eta = Z @ coef + offset
    return float(np.mean(weights * (link.cumulant(eta) - y * eta)))


def neg_quasi_grad(Z, y, coef, weights=None, link="logit", offset=None):
    """Gradient of :func:`neg_quasi_loss` in ``coef``: ``(1/n) sum w_i {g(eta_i) - y_i} z_i``."""
    link = as_link(link)
    Z, y, coef, weights, offset = _check_rows(Z, y, coef, weights, offset)
    if Z.shape[0] == 0:
        return np.zeros(Z.shape[1])
    eta = Z @ coef + offset
    return Z.T @ (weights * (link.mean(eta) - y)) / Z.shape[0]


@dataclass(frozen=True)
class ObservationBlock:
    """Rows from one population, either labeled (``y`` present) or not.

    ``X`` carries the intercept as column 0. Empty blocks (zero rows) are
    allowed so that degenerate designs such as "no source labels" can be
    expressed directly.
    """

    X: np.ndarray
    S: np.ndarray
    y: Optional[np.ndarray] = None
    population: str = "target"
    labeled: bool = False

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        S = np.array(self.S, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("X must be a 2-d array with at least one column")
        if S.ndim == 1 and S.size == 0:
            S = np.zeros((X.shape[0], 0))
        if S.ndim != 2 or S.shape[0] != X.shape[0]:
            raise ValueError("S must be 2-d with the same number of rows as X")
        if self.population not in POPULATIONS:
            raise ValueError(f"population must be one of {POPULATIONS}")
        y = self.y
        if self.labeled:
            if y is None:
                raise ValueError("labeled block requires y")
            y = np.array(y, dtype=float)
            if y.shape != (X.shape[0],):
                raise ValueError("y must have one entry per row")
        elif y is not None:
            raise ValueError("unlabeled block must not carry y")
        for arr in (X, S):
            arr.setflags(write=False)
        if y is not None:
            y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.S.shape[1]

    @property
    def Z(self) -> np.ndarray:
        return np.hstack([self.X, self.S])

    def take(self, idx) -> "ObservationBlock":
        idx = np.asarray(idx)
        return replace(
            self,
            X=self.X[idx],
            S=self.S[idx],
            y=None if self.y is None else self.y[idx],
        )


def empty_block(p, q, population, labeled) -> ObservationBlock:
    return ObservationBlock(
        X=np.zeros((0, p)),
        S=np.zeros((0, q)),
        y=np.zeros(0) if labeled else None,
        population=population,
        labeled=labeled,
    )


@dataclass(frozen=True)
class StudyData:
    """The four observation blocks: target/source crossed with labeled/unlabeled."""

    target_labeled: ObservationBlock
    target_unlabeled: ObservationBlock
    source_labeled: ObservationBlock
    source_unlabeled: ObservationBlock

    def __post_init__(self):
        expected = {
            "target_labeled": ("target", True),
            "target_unlabeled": ("target", False),
            "source_labeled": ("source", True),
            "source_unlabeled": ("source", False),
        }
        shapes = set()
        for name, (pop, lab) in expected.items():
            block = getattr(self, name)
            if block.population != pop or block.labeled != lab:
                raise ValueError(f"{name} block has population={block.population}, labeled={block.labeled}")
            shapes.add((block.p, block.q))
        if len(shapes) != 1:
            raise ValueError(f"blocks disagree on (p, q): {sorted(shapes)}")

    @property
    def blocks(self):
        return (self.target_labeled, self.target_unlabeled, self.source_labeled, self.source_unlabeled)

    @property
    def p(self) -> int:
        return self.target_labeled.p

    @property
    def q(self) -> int:
        return self.target_labeled.q

    @property
    def d(self) -> int:
        return self.p + self.q

    @property
    def n_T(self) -> int:
        return self.target_labeled.n

    @property
    def N_T(self) -> int:
        return self.target_unlabeled.n

    @property
    def n_S(self) -> int:
        return self.source_labeled.n

    @property
    def N_S(self) -> int:
        return self.source_unlabeled.n

    @property
    def n(self) -> int:
        return self.n_S + self.n_T

    @property
    def N(self) -> int:
        return self.N_S + self.N_T

    def replace(self, **blocks) -> "StudyData":
        return replace(self, **blocks)


@dataclass(frozen=True)
class ScalingRecord:
    """Column centers and scales used by :func:`standardize`.

    ``centers``/``scales`` map a population name (or ``"all"``) to a pair of
    ``(x_stats, s_stats)`` arrays. The intercept column has center 0, scale 1.
    """

    per_population: bool
    x_center: dict = field(default_factory=dict)
    x_scale: dict = field(default_factory=dict)
    s_center: dict = field(default_factory=dict)
    s_scale: dict = field(default_factory=dict)
    divisor: str = "n"

    def _key(self, population):
        return population if self.per_population else "all"

    def apply(self, block: ObservationBlock) -> ObservationBlock:
        k = self._key(block.population)
        X = (block.X - self.x_center[k]) / self.x_scale[k]
        S = (block.S - self.s_center[k]) / self.s_scale[k]
        return replace(block, X=X, S=S)

    def unscale_coef(self, coef, population="target", include_s=False):
        """Map coefficients fitted on standardized columns back to raw columns.

        ``coef`` covers X (intercept first), followed by S when ``include_s``.
        """
        k = self._key(population)
        coef = np.asarray(coef, dtype=float)
        centers = self.x_center[k]
        scales = self.x_scale[k]
        if include_s:
            centers = np.concatenate([centers, self.s_center[k]])
            scales = np.concatenate([scales, self.s_scale[k]])
        if coef.shape != centers.shape:
            raise ValueError("coefficient length does not match the scaling record")
        raw = coef / scales
        raw[0] = coef[0] - np.sum(coef[1:] * centers[1:] / scales[1:])
        return raw


def _column_stats(M, label, offset=0):
    center = M.mean(axis=0)
    scale = M.std(axis=0)
    bad = np.flatnonzero(scale <= 1e-12 * np.maximum(1.0, np.abs(center)))
    if bad.size:
        raise ValueError(f"zero-variance {label} column(s): {(bad + offset).tolist()}")
    return center, scale


def standardize(data: StudyData, per_population: bool = False):
    """Center and scale every non-intercept column of X and S.

    Statistics use the population divisor ``n`` and are pooled over all four
    blocks, or computed separately for target and source rows when
    ``per_population`` is true. Returns ``(standardized_data, ScalingRecord)``.
    """
    groups = {"all": data.blocks}
    if per_population:
        groups = {
            "target": (data.target_labeled, data.target_unlabeled),
            "source": (data.source_labeled, data.source_unlabeled),
        }
    rec = ScalingRecord(per_population=per_population)
    for key, blocks in groups.items():
        X = np.vstack([b.X for b in blocks])
        S = np.vstack([b.S for b in blocks])
        if X.shape[0] < 2:
            raise ValueError(f"cannot standardize {key!r} rows: fewer than two observations")
        xc, xs = np.zeros(X.shape[1]), np.ones(X.shape[1])
        if X.shape[1] > 1:
            xc[1:], xs[1:] = _column_stats(X[:, 1:], "X", offset=1)
        sc, ss = np.zeros(S.shape[1]), np.ones(S.shape[1])
        if S.shape[1]:
            sc, ss = _column_stats(S, "S")
        rec.x_center[key], rec.x_scale[key] = xc, xs
        rec.s_center[key], rec.s_scale[key] = sc, ss
    out = StudyData(*(rec.apply(b) for b in data.blocks))
    return out, rec
