"""Data-generating processes C1-C5, the oracle outcome parameter, metrics and the replication driver.

Covariates mimic zero-inflated EHR features: latent ``W ~ N(0, Sigma)`` with
``Sigma[j, k] = iota ** |j - k|`` is pushed through the softplus
``a(t) = log(1 + e^t)``; three surrogates load on blocks of ``X``. Outcome
and membership logits then act on the standardized columns.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cholesky
from scipy.special import expit
from scipy.stats import rankdata

from .density_ratio import BasisSpec, fit_dr_ridge_threshold
from .estimators import METHODS, Tuning, fit_methods
from .glm import ObservationBlock, StudyData

logger = logging.getLogger(__name__)

SCENARIOS = {
    "C1": ("M_cor", "W_cor"),
    "C2": ("M_mis", "W_cor"),
    "C3": ("M_cor", "W_mis"),
    "C4": ("M_mis", "W_mis"),
    "C5": ("M_mis_prime", "W_mis_prime"),
}


@dataclass(frozen=True)
class SimConfig:
    scenario: str = "C1"
    iota: float = 0.0
    n_T: int = 150
    N_T: int = 10000
    n_S: int = 1200
    N_S: int = 10000
    p: int = 150
    q: int = 30
    reps: int = 100
    seed: int = 0
    n_eval: int = 10000
    # which surrogate carries the -3 coefficient in the C5 outcome model
    mis_prime_s_index: int = 3
    batch_size: int = 50000

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {sorted(SCENARIOS)}")
        if self.scenario == "C5" and self.iota != 0:
            raise ValueError("scenario C5 is defined for iota = 0 only")
        if not 0 <= self.iota < 1:
            raise ValueError("iota must lie in [0, 1)")
        if self.p < 10 or self.q < 3:
            raise ValueError("the data-generating models need p >= 10 and q >= 3")
        if self.mis_prime_s_index not in (2, 3):
            raise ValueError("mis_prime_s_index must be 2 or 3")
        for name in ("n_T", "N_T", "n_S", "N_S", "n_eval"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")

    @property
    def outcome_model(self) -> str:
        return SCENARIOS[self.scenario][0]

    @property
    def membership_model(self) -> str:
        return SCENARIOS[self.scenario][1]

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self, exclude=()) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def softplus(t):
    """The covariate transformation ``a(t) = log(1 + e^t)``."""
    return np.logaddexp(0.0, t)


def latent_cholesky(d, iota):
    if iota == 0:
        return None
    idx = np.arange(d)
    sigma = iota ** np.abs(idx[:, None] - idx[None, :])
    return cholesky(sigma, lower=True)


def draw_raw_covariates(n, p, q, iota, rng, chol=None):
    """Unstandardized (X, S) without intercept, following the latent-Gaussian recipe."""
    d = p + q
    W = rng.standard_normal((n, d))
    if iota != 0:
        L = latent_cholesky(d, iota) if chol is None else chol
        W = W @ L.T
    X = softplus(W[:, :p])
    S = softplus(W[:, p:])
    S[:, 0] = softplus(X[:, 0:5].sum(axis=1) + W[:, p])
    S[:, 1] = softplus(X[:, 2:7].sum(axis=1) + W[:, p + 1])
    S[:, 2] = softplus(X[:, 5:10].sum(axis=1) + W[:, p + 2])
    return X, S


@dataclass(frozen=True)
class CovariateScaling:
    x_center: np.ndarray
    x_scale: np.ndarray
    s_center: np.ndarray
    s_scale: np.ndarray

    @classmethod
    def from_sample(cls, X, S):
        return cls(X.mean(axis=0), X.std(axis=0), S.mean(axis=0), S.std(axis=0))

    def to_dict(self):
        return {k: [float(v) for v in getattr(self, k)] for k in ("x_center", "x_scale", "s_center", "s_scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("x_center", "x_scale", "s_center", "s_scale")))

    def apply(self, X, S):
        Xs = (X - self.x_center) / self.x_scale
        Ss = (S - self.s_center) / self.s_scale
        return np.hstack([np.ones((X.shape[0], 1)), Xs]), Ss


def gen_covariates(config: SimConfig, rng, n=None, scaling: Optional[CovariateScaling] = None):
    """Draw and standardize covariates; returns ``(X, S, scaling)``.

    ``X`` has the intercept prepended after standardization. Without a
    ``scaling`` record the sample's own means and (divisor-n) standard
    deviations are used.
    """
    n = config.batch_size if n is None else n
    Xr, Sr = draw_raw_covariates(n, config.p, config.q, config.iota, rng)
    if scaling is None:
        scaling = CovariateScaling.from_sample(Xr, Sr)
    X, S = scaling.apply(Xr, Sr)
    return X, S, scaling


# X[:, j] is covariate j (X[:, 0] is the intercept); S[:, j - 1] is surrogate j


def outcome_logit(X, S, model, s_index=3):
    x1, x2, x3 = X[:, 1], X[:, 2], X[:, 3]
    s1, s2, s3 = S[:, 0], S[:, 1], S[:, 2]
    if model == "M_cor":
        return 0.2 - x1 + x2 - x3 + 2 * s1 - 2 * s2 + 2 * s3
    if model == "M_mis":
        return -x1 + x2 + x3**2 - s2 + 2 * s3 + 2 * s1 / (1 + np.exp(-x1 * s1**2))
    if model == "M_mis_prime":
        s_neg = S[:, s_index - 1]
        return -1 - 2 * x1 + x2**2 + 3 * s1 - 3 * s_neg + 1 / (1 + np.exp(-x3 * s3**2))
    raise ValueError(f"unknown outcome model {model!r}")


def membership_logit(X, S, model):
    x1, x2, x3 = X[:, 1], X[:, 2], X[:, 3]
    s1, s2, s3 = S[:, 0], S[:, 1], S[:, 2]
    tail = X[:, 3:11].sum(axis=1)
    if model == "W_cor":
        return x1 - x2 - x3 + s1
    if model == "W_mis":
        return 1.8 * s2 - 2 * s3 + s1 * (1 + (x1 + x2) / (1 + np.exp(-tail)))
    if model == "W_mis_prime":
        return -2 * x1 + 2 * x2 + 3 * s1 - 3 * s2 + s3 * (x1 + x2) / (1 + np.exp(-tail))
    raise ValueError(f"unknown membership model {model!r}")


def gen_outcome(X, S, scenario, rng, s_index=3, outcome: Optional[Callable] = None):
    """Bernoulli outcomes; ``outcome`` may override the scenario's logit as ``f(X, S)``."""
    eta = outcome(X, S) if outcome is not None else outcome_logit(X, S, SCENARIOS[scenario][0], s_index)
    return (rng.random(X.shape[0]) < expit(eta)).astype(float)


def gen_membership(X, S, scenario, rng):
    """R = 1 routes a row to the source population."""
    eta = membership_logit(X, S, SCENARIOS[scenario][1])
    return (rng.random(X.shape[0]) < expit(eta)).astype(int)


@dataclass
class SimulatedStudy:
    data: StudyData
    X_eval: np.ndarray
    y_eval: np.ndarray
    scaling: CovariateScaling
    rows_generated: int


def _take_quota(idx, counts):
    """Split an arrival-ordered index array into consecutive pieces of the given sizes."""
    out, start = [], 0
    for c in counts:
        out.append(idx[start : start + c])
        start += c
    return out


def assemble_study(
    config: SimConfig, rng, outcome: Optional[Callable] = None, scaling: Optional[CovariateScaling] = None
) -> SimulatedStudy:
    """Generate rows in batches and route them into the four blocks plus an evaluation set.

    Rows are routed by membership to source or target, then in arrival order
    into labeled, unlabeled (and, for target, evaluation) quotas; surplus rows
    are discarded. Columns are standardized with ``scaling`` when given, else
    with the first batch's moments.
    """
    tq = [config.n_T, config.N_T, config.n_eval]
    sq = [config.n_S, config.N_S]
    got = {"t": [], "s": []}
    need_t, need_s = sum(tq), sum(sq)
    have_t = have_s = 0
    generated = 0
    chol = latent_cholesky(config.p + config.q, config.iota)
    while have_t < need_t or have_s < need_s:
        Xr, Sr = draw_raw_covariates(config.batch_size, config.p, config.q, config.iota, rng, chol)
        if scaling is None:
            scaling = CovariateScaling.from_sample(Xr, Sr)
        X, S = scaling.apply(Xr, Sr)
        y = gen_outcome(X, S, config.scenario, rng, config.mis_prime_s_index, outcome)
        R = gen_membership(X, S, config.scenario, rng)
        generated += X.shape[0]
        for key, flag in (("t", 0), ("s", 1)):
            idx = np.flatnonzero(R == flag)
            room = (need_t - have_t) if key == "t" else (need_s - have_s)
            idx = idx[:room]
            if idx.size:
                got[key].append((X[idx], S[idx], y[idx]))
            if key == "t":
                have_t += idx.size
            else:
                have_s += idx.size
        if generated > 200 * (need_t + need_s + 1):
            raise RuntimeError("membership model starves one population; quotas cannot be filled")

    def stack(key):
        parts = got[key]
        if not parts:
            return np.zeros((0, config.p + 1)), np.zeros((0, config.q)), np.zeros(0)
        return tuple(np.concatenate([pt[i] for pt in parts]) for i in range(3))

    Xt, St, yt = stack("t")
    Xs, Ss, ys = stack("s")
    tl, tu, te = _take_quota(np.arange(Xt.shape[0]), tq)
    sl, su = _take_quota(np.arange(Xs.shape[0]), sq)
    data = StudyData(
        ObservationBlock(Xt[tl], St[tl], yt[tl], "target", True),
        ObservationBlock(Xt[tu], St[tu], None, "target", False),
        ObservationBlock(Xs[sl], Ss[sl], ys[sl], "source", True),
        ObservationBlock(Xs[su], Ss[su], None, "source", False),
    )
    return SimulatedStudy(data, Xt[te], yt[te], scaling, generated)


# oracle ---------------------------------------------------------------------


@dataclass
class OracleParams:
    beta0: np.ndarray
    how: dict

    def to_dict(self):
        return {"beta0": [float(b) for b in self.beta0], "how": self.how}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["beta0"], dtype=float), d["how"])

    @property
    def scaling(self) -> Optional[CovariateScaling]:
        sc = self.how.get("scaling")
        return None if sc is None else CovariateScaling.from_dict(sc)


def _logistic_newton(chunks, tol, max_iter=50):
    """Unpenalized logistic regression by Newton's method over row chunks."""
    p = chunks[0][0].shape[1]
    n = sum(X.shape[0] for X, _ in chunks)
    beta = np.zeros(p)
    for it in range(1, max_iter + 1):
        g = np.zeros(p)
        H = np.zeros((p, p))
        for X, y in chunks:
            mu = expit(X @ beta)
            g += X.T @ (mu - y)
            H += (X * (mu * (1 - mu))[:, None]).T @ X
        g /= n
        H /= n
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            return beta, gnorm, it, H
        beta = beta - np.linalg.solve(H, g)
    raise RuntimeError(f"oracle Newton iterations did not reach gradient tolerance {tol}")


def population_scaling(p=150, q=30, iota=0.0, n=1_000_000, seed=20240601, chunk=100_000) -> CovariateScaling:
    """Covariate means and standard deviations estimated from ``n`` unconditional draws.

    Both populations share one covariate law before membership is drawn, so
    these moments serve as the global standardization for every scenario.
    """
    chol = latent_cholesky(p + q, iota)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31 - 1,)))
    s1 = s2 = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        Xr, Sr = draw_raw_covariates(m, p, q, iota, rng, chol)
        M = np.hstack([Xr, Sr])
        s1 = s1 + M.sum(axis=0)
        s2 = s2 + (M * M).sum(axis=0)
        done += m
    mean = s1 / n
    sd = np.sqrt(np.maximum(s2 / n - mean**2, 0.0))
    return CovariateScaling(mean[:p], sd[:p], mean[p:], sd[p:])


def compute_oracle_beta0(
    scenario: str,
    iota: float = 0.0,
    oracle_n: int = 1_000_000,
    tol: float = 1e-10,
    seed: int = 20240601,
    p: int = 150,
    q: int = 30,
    mis_prime_s_index: int = 3,
    chunk: int = 100_000,
    outcome: Optional[Callable] = None,
    scaling: Optional[CovariateScaling] = None,
) -> OracleParams:
    """Solve the target moment condition E_T[X {Y - g(X'beta)}] = 0 on a large target sample.

    Rows are generated in chunks, standardized with ``scaling`` (by default
    :func:`population_scaling`), routed by the membership model, and target
    rows are kept until ``oracle_n``. The unpenalized logistic fit is solved by
    Newton's method to gradient max-norm ``tol``.
    """
    if oracle_n < 1:
        raise ValueError("oracle_n must be positive")
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    if scaling is None:
        scaling = population_scaling(p, q, iota, seed=seed)
    chol = latent_cholesky(p + q, iota)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    data_chunks = []
    kept = generated = 0
    while kept < oracle_n:
        Xr, Sr = draw_raw_covariates(chunk, p, q, iota, rng, chol)
        X, S = scaling.apply(Xr, Sr)
        y = gen_outcome(X, S, scenario, rng, mis_prime_s_index, outcome)
        R = gen_membership(X, S, scenario, rng)
        idx = np.flatnonzero(R == 0)[: oracle_n - kept]
        data_chunks.append((X[idx], y[idx]))
        kept += idx.size
        generated += chunk
    beta0, gnorm, iters, H = _logistic_newton(data_chunks, tol)
    # sandwich standard errors, for Monte-Carlo diagnostics
    meat = np.zeros_like(H)
    for X, y in data_chunks:
        r = y - expit(X @ beta0)
        meat += (X * (r * r)[:, None]).T @ X
    meat /= oracle_n
    Hinv = np.linalg.inv(H)
    se = np.sqrt(np.diag(Hinv @ meat @ Hinv) / oracle_n)
    how = {
        "scenario": scenario,
        "iota": iota,
        "oracle_n": int(oracle_n),
        "tol": tol,
        "grad_norm": gnorm,
        "newton_iterations": iters,
        "seed": seed,
        "p": p,
        "q": q,
        "mis_prime_s_index": mis_prime_s_index,
        "rows_generated": int(generated),
        "mc_se": [float(x) for x in se],
        "custom_outcome": outcome is not None,
        "scaling": scaling.to_dict(),
    }
    return OracleParams(beta0, how)


def oracle_cache_key(scenario, iota, oracle_n, seed, p, q, mis_prime_s_index) -> str:
    blob = json.dumps([scenario, iota, oracle_n, seed, p, q, mis_prime_s_index])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cached_oracle_beta0(cache_dir, scenario, iota=0.0, oracle_n=1_000_000, seed=20240601, p=150, q=30, mis_prime_s_index=3, tol=1e-10):
    """:func:`compute_oracle_beta0` memoized as JSON under ``cache_dir``."""
    key = oracle_cache_key(scenario, iota, oracle_n, seed, p, q, mis_prime_s_index)
    path = Path(cache_dir) / f"oracle_{scenario}_{key}.json"
    if path.exists():
        return OracleParams.from_dict(json.loads(path.read_text()))
    res = compute_oracle_beta0(scenario, iota, oracle_n, tol, seed, p, q, mis_prime_s_index)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(res.to_dict()))
    return res


# metrics --------------------------------------------------------------------


def metric_abs_bias(beta_hats, beta0, mode="bias_of_mean") -> float:
    """Average absolute bias over coefficients.

    ``"bias_of_mean"``: mean over j of |mean_r(beta_hat_rj) - beta0_j|.
    ``"mean_abs"``: mean over r and j of |beta_hat_rj - beta0_j|.
    """
    B = np.atleast_2d(np.asarray(beta_hats, dtype=float))
    beta0 = np.asarray(beta0, dtype=float)
    if B.shape[1] != beta0.size:
        raise ValueError("estimate and oracle lengths differ")
    if mode == "bias_of_mean":
        return float(np.mean(np.abs(B.mean(axis=0) - beta0)))
    if mode == "mean_abs":
        return float(np.mean(np.abs(B - beta0)))
    raise ValueError(f"unknown abs-bias mode {mode!r}")


def metric_l2(beta_hat, beta0) -> float:
    return float(np.linalg.norm(np.asarray(beta_hat, dtype=float) - np.asarray(beta0, dtype=float)))


def metric_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


# replication driver ---------------------------------------------------------


@dataclass
class MetricRow:
    method: str
    abs_bias: float
    l2_err: float
    auc: float
    reps_used: int
    rho_rate: Optional[float] = None
    scenario: str = ""
    n_S: int = 0
    iota: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.auc <= 1.0) and not np.isnan(self.auc):
            raise ValueError("auc must lie in [0, 1]")


@dataclass
class RepResult:
    rep: int
    method: str
    beta: list
    abs_bias: float
    l2_err: float
    auc: float
    rho: Optional[int]
    seconds: float
    error: Optional[str] = None

    def to_dict(self):
        return asdict(self)


def rep_seed_sequence(seed, rep) -> np.random.SeedSequence:
    """Per-replication stream; independent of execution order."""
    return np.random.SeedSequence(seed, spawn_key=(rep,))


@dataclass
class ReplicationSettings:
    methods: tuple = METHODS
    tuning: Tuning = field(default_factory=Tuning)
    epsilon0: float = 0.0
    ridge_lambda: float = 1e-5
    cutoff_const: float = 10.0


def replication_study(config: SimConfig, rep: int, scaling=None):
    """The simulated study of replication ``rep`` and the two seeds its fits use."""
    data_ss, fit_ss = rep_seed_sequence(config.seed, rep).spawn(2)
    sim = assemble_study(config, np.random.default_rng(data_ss), scaling=scaling)
    return sim, fit_ss.generate_state(2)


def run_one_replication(config: SimConfig, rep: int, beta0, settings: ReplicationSettings, scaling=None) -> list:
    """Generate one data set, fit every method, and score it against ``beta0``."""
    sim, fit_seeds = replication_study(config, rep, scaling)
    tuning = settings.tuning
    tuning = Tuning(tuning.penalty, tuning.cv.reseeded(int(fit_seeds[0])), tuning.link, tuning.delta_penalty)
    methods = tuple(settings.methods)
    t0 = time.perf_counter()
    dr = None
    if {"CS", "Meta", "STRIFLE"} & set(methods):
        dr = fit_dr_ridge_threshold(sim.data, BasisSpec(), settings.ridge_lambda, settings.cutoff_const)
    dr_secs = time.perf_counter() - t0
    bundle = fit_methods(sim.data, methods, dr, tuning, settings.epsilon0, int(fit_seeds[1]))
    rows = []
    for m in methods:
        est = bundle.outcomes[m]
        secs = bundle.seconds.get(m, 0.0) + (dr_secs if m in ("CS", "Meta", "STRIFLE") else 0.0)
        rows.append(
            RepResult(
                rep=rep,
                method=m,
                beta=[float(b) for b in est.beta],
                abs_bias=metric_abs_bias(est.beta, beta0),
                l2_err=metric_l2(est.beta, beta0),
                auc=metric_auc(sim.X_eval @ est.beta, sim.y_eval),
                rho=est.rho,
                seconds=secs,
            )
        )
    return rows


def _rep_cache_path(cache_dir, config, settings, rep, scaling=None):
    sc = None if scaling is None else scaling.to_dict()
    # the replication count is excluded so a longer run reuses a shorter one
    blob = [config.digest(exclude=("reps",)), list(settings.methods), settings.epsilon0, settings.ridge_lambda, settings.cutoff_const, repr(settings.tuning), sc]
    tag = hashlib.sha256(json.dumps(blob).encode()).hexdigest()[:16]
    return Path(cache_dir) / f"{config.scenario}_{tag}" / f"rep{rep:04d}.json"


def _run_rep_safe(args):
    config, rep, beta0, settings, cache_dir, scaling = args
    path = _rep_cache_path(cache_dir, config, settings, rep, scaling) if cache_dir else None
    if path is not None and path.exists():
        return [RepResult(**d) for d in json.loads(path.read_text())]
    try:
        rows = run_one_replication(config, rep, beta0, settings, scaling)
    except Exception as exc:  # a failed replication is recorded and excluded
        # failures are deterministic given the seed, so they are cached too
        logger.warning("replication %d failed: %s", rep, exc)
        rows = [RepResult(rep, m, [], np.nan, np.nan, np.nan, None, 0.0, error=repr(exc)) for m in settings.methods]
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps([r.to_dict() for r in rows]))
    return rows


def aggregate(results, beta0, config: Optional[SimConfig] = None, bias_mode="bias_of_mean") -> list:
    """Per-method summary rows; independent of replication order."""
    by_method = {}
    for r in results:
        by_method.setdefault(r.method, []).append(r)
    out = []
    for m in sorted(by_method, key=lambda k: METHODS.index(k) if k in METHODS else len(METHODS)):
        ok = sorted((r for r in by_method[m] if r.error is None), key=lambda r: r.rep)
        if not ok:
            out.append(MetricRow(m, np.nan, np.nan, np.nan, 0))
            continue
        rhos = [r.rho for r in ok if r.rho is not None]
        out.append(
            MetricRow(
                method=m,
                abs_bias=metric_abs_bias([r.beta for r in ok], beta0, bias_mode),
                l2_err=float(np.mean([r.l2_err for r in ok])),
                auc=float(np.mean([r.auc for r in ok])),
                reps_used=len(ok),
                rho_rate=float(np.mean(rhos)) if rhos else None,
                scenario=config.scenario if config else "",
                n_S=config.n_S if config else 0,
                iota=config.iota if config else 0.0,
            )
        )
    return out


def run_replications(
    config: SimConfig,
    methods=METHODS,
    parallelism: int = 1,
    beta0=None,
    settings: Optional[ReplicationSettings] = None,
    cache_dir=None,
    progress: Optional[Callable] = None,
    scaling: Optional[CovariateScaling] = None,
):
    """Run ``config.reps`` replications and aggregate per method.

    Returns ``(metric_rows, rep_results)``. With ``cache_dir`` each finished
    replication is stored as JSON and reused on later calls. ``beta0`` may be
    an :class:`OracleParams`, whose covariate scaling is then reused.
    """
    if isinstance(beta0, OracleParams):
        scaling = scaling if scaling is not None else beta0.scaling
        beta0 = beta0.beta0
    if beta0 is None:
        raise ValueError("run_replications needs the oracle beta0 for the scenario")
    settings = settings or ReplicationSettings()
    settings = ReplicationSettings(tuple(methods), settings.tuning, settings.epsilon0, settings.ridge_lambda, settings.cutoff_const)
    beta0 = np.asarray(beta0, dtype=float)
    jobs = [(config, rep, beta0, settings, cache_dir, scaling) for rep in range(config.reps)]
    results = []
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            for rows in ex.map(_run_rep_safe, jobs):
                results.extend(rows)
                if progress:
                    progress(rows)
    else:
        for job in jobs:
            rows = _run_rep_safe(job)
            results.extend(rows)
            if progress:
                progress(rows)
    failed = sorted({r.rep for r in results if r.error is not None})
    if failed:
        logger.warning("%d replication(s) failed and were excluded: %s", len(failed), failed)
    return aggregate(results, beta0, config), results
