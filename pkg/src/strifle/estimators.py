"""Imputation-model estimators, the transferability gate, and outcome-model estimators.

Imputation model (``theta`` on ``z = (x, s)``):

* target-only fit on the target labeled rows;
* pooled fit over source and target labeled rows, source rows reweighted by
  the density ratio;
* bias correction of the pooled fit on target labeled rows (meta estimate);
* a cross-fitted binary choice between the meta and target-only estimates.

Outcome model (``beta`` on ``x``): the semi-supervised fit that pseudo-labels
target unlabeled rows with ``g(z' theta)``, plus the SUP, CS and
transfer-GLM baselines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .density_ratio import DensityRatioFit
from .glm import LinkSpec, StudyData, as_link, neg_quasi_loss
from .penalty import PenaltySpec
from .solver import CVConfig, fit_cv

METHODS = ("SUP", "SAS", "CS", "Meta", "STRIFLE", "TransGLM")
THETA_KINDS = ("target_only", "pooled", "meta", "strifle")


@dataclass
class ImputationEstimate:
    theta: np.ndarray
    kind: str
    lam: object
    provenance: dict = field(default_factory=dict)
    rho: Optional[int] = None
    delta: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in THETA_KINDS:
            raise ValueError(f"unknown imputation estimate kind {self.kind!r}")
        if self.kind == "strifle" and self.rho not in (0, 1):
            raise ValueError("strifle estimate must carry rho in {0, 1}")


@dataclass
class TransferDecision:
    rho: int
    epsilon0: float
    loss_meta: float
    loss_target: float
    split_seed: int
    halves: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        expected = int(self.loss_meta <= self.loss_target - self.epsilon0)
        if self.rho != expected:
            raise ValueError("rho inconsistent with the recorded held-out losses")


@dataclass
class OutcomeEstimate:
    beta: np.ndarray
    method: str
    lam: object
    rho: Optional[int] = None
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "beta": [float(b) for b in self.beta],
            "lambda": _jsonable(self.lam),
            "rho": self.rho,
        }
        for key, val in self.extra.items():
            out[key] = _jsonable(val)
        return out


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return int(v)
    return v


@dataclass
class Tuning:
    """Penalty families and CV rule shared by every component fit.

    ``delta_penalty`` optionally uses a different family for the bias
    correction step; it defaults to ``penalty``.
    """

    penalty: PenaltySpec = field(default_factory=lambda: PenaltySpec("lasso"))
    cv: CVConfig = field(default_factory=CVConfig)
    link: LinkSpec = field(default_factory=lambda: LinkSpec("logit"))
    delta_penalty: Optional[PenaltySpec] = None

    @property
    def delta(self) -> PenaltySpec:
        return self.delta_penalty or self.penalty


def _tuning(tuning) -> Tuning:
    return Tuning() if tuning is None else tuning


def _require_labels(data: StudyData, min_rows=1):
    if data.n_T < min_rows:
        raise ValueError(f"need at least {min_rows} target labeled rows, got {data.n_T}")


# imputation model -----------------------------------------------------------


def fit_theta_target_only(data: StudyData, tuning: Tuning = None) -> ImputationEstimate:
    """Penalized quasi-likelihood fit of y on z over the target labeled rows."""
    tuning = _tuning(tuning)
    _require_labels(data, tuning.cv.folds if tuning.cv.lam is None else 1)
    TL = data.target_labeled
    tf = fit_cv(TL.Z, TL.y, None, tuning.link, tuning.penalty, tuning.cv)
    return ImputationEstimate(tf.coef.copy(), "target_only", tf.lam, {"blocks": ["target_labeled"], "n": TL.n})


def pooled_design(data: StudyData, dr: Optional[DensityRatioFit]):
    """Stacked source-then-target labeled rows with source importance weights."""
    SL, TL = data.source_labeled, data.target_labeled
    Z = np.vstack([SL.Z, TL.Z])
    y = np.concatenate([SL.y, TL.y])
    w_src = np.ones(SL.n) if dr is None else dr.weights(SL.Z)
    if not np.all(np.isfinite(w_src)):
        raise ValueError("non-finite density-ratio weight on a source labeled row")
    return Z, y, np.concatenate([w_src, np.ones(TL.n)])


def fit_theta_pooled(data: StudyData, dr: Optional[DensityRatioFit], tuning: Tuning = None) -> ImputationEstimate:
    """Density-ratio-weighted pooled fit over source and target labeled rows.

    With ``dr=None`` every row has weight one.
    """
    tuning = _tuning(tuning)
    Z, y, w = pooled_design(data, dr)
    if Z.shape[0] < (tuning.cv.folds if tuning.cv.lam is None else 1):
        raise ValueError("too few labeled rows for the pooled fit")
    tf = fit_cv(Z, y, w, tuning.link, tuning.penalty, tuning.cv)
    prov = {"blocks": ["source_labeled", "target_labeled"], "n": Z.shape[0]}
    return ImputationEstimate(tf.coef.copy(), "pooled", tf.lam, prov)


def fit_delta(data: StudyData, theta_tilde, tuning: Tuning = None) -> ImputationEstimate:
    """Bias correction on the target labeled rows with ``z' theta_tilde`` as offset.

    Returns the meta estimate ``theta_tilde + delta`` with ``delta`` attached.
    """
    tuning = _tuning(tuning)
    TL = data.target_labeled
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    if theta_tilde.shape != (data.d,):
        raise ValueError(f"theta_tilde must have length {data.d}")
    _require_labels(data, tuning.cv.folds if tuning.cv.lam is None else 1)
    Z = TL.Z
    tf = fit_cv(Z, TL.y, None, tuning.link, tuning.delta, tuning.cv, offset=Z @ theta_tilde)
    delta = tf.coef.copy()
    return ImputationEstimate(
        theta_tilde + delta, "meta", tf.lam, {"blocks": ["target_labeled"], "n": TL.n}, delta=delta
    )


def fit_theta_meta(data: StudyData, dr: Optional[DensityRatioFit], tuning: Tuning = None):
    """Pooled fit followed by the target-side bias correction.

    Without source labeled rows the pooled fit is the target-only fit and no
    correction is attempted, so the meta estimate equals the target-only one.
    Returns ``(meta_estimate, pooled_estimate)``.
    """
    tuning = _tuning(tuning)
    pooled = fit_theta_pooled(data, dr, tuning)
    if data.n_S == 0:
        meta = ImputationEstimate(
            pooled.theta.copy(), "meta", (pooled.lam, None), dict(pooled.provenance), delta=np.zeros(data.d)
        )
        return meta, pooled
    corr = fit_delta(data, pooled.theta, tuning)
    corr.lam = (pooled.lam, corr.lam)
    corr.provenance = {"blocks": ["source_labeled", "target_labeled"], "n": data.n}
    return corr, pooled


def half_split(n, seed):
    """Random equal split of ``range(n)``: sizes floor(n/2) and ceil(n/2)."""
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[: n // 2]), np.sort(perm[n // 2 :])


def heldout_loss(Z, y, theta, link) -> float:
    """Unpenalized mean of ``G(z' theta) - y z' theta`` over the given rows."""
    return neg_quasi_loss(Z, y, theta, None, link)


def estimate_rho(
    data: StudyData,
    dr: Optional[DensityRatioFit],
    tuning: Tuning = None,
    epsilon0: float = 0.0,
    split_seed: int = 0,
) -> TransferDecision:
    """Cross-fitted indicator that the meta estimate beats the target-only one.

    The target labeled rows are split in two halves. For each half ``k`` both
    estimators are refit (lambdas re-tuned) using that half, and scored on the
    other half; ``rho = 1`` iff the averaged meta loss is at most the averaged
    target-only loss minus ``epsilon0``.
    """
    tuning = _tuning(tuning)
    if epsilon0 < 0:
        raise ValueError("epsilon0 must be nonnegative")
    if data.n_T < 4:
        raise ValueError("need at least 4 target labeled rows to cross-fit rho")
    TL = data.target_labeled
    halves = half_split(TL.n, split_seed)
    loss_meta, loss_target, records = [], [], []
    for k in range(2):
        fit_idx, eval_idx = halves[k], halves[1 - k]
        sub = data.replace(target_labeled=TL.take(fit_idx))
        th_t = fit_theta_target_only(sub, tuning)
        th_m, _ = fit_theta_meta(sub, dr, tuning)
        Ze, ye = TL.Z[eval_idx], TL.y[eval_idx]
        loss_target.append(heldout_loss(Ze, ye, th_t.theta, tuning.link))
        loss_meta.append(heldout_loss(Ze, ye, th_m.theta, tuning.link))
        records.append({"fit_rows": fit_idx, "eval_rows": eval_idx, "theta_target": th_t.theta, "theta_meta": th_m.theta})
    lm, lt = float(np.mean(loss_meta)), float(np.mean(loss_target))
    rho = int(lm <= lt - epsilon0)
    return TransferDecision(rho, float(epsilon0), lm, lt, int(split_seed), records)


def fit_theta_strifle(
    data: StudyData,
    dr: Optional[DensityRatioFit],
    tuning: Tuning = None,
    epsilon0: float = 0.0,
    split_seed: int = 0,
    theta_target: Optional[ImputationEstimate] = None,
    theta_meta: Optional[ImputationEstimate] = None,
):
    """Select the full-data meta or target-only estimate by the cross-fitted gate.

    Precomputed full-data estimates may be passed in to avoid refitting.
    Returns ``(strifle_estimate, decision)``.
    """
    tuning = _tuning(tuning)
    if theta_target is None:
        theta_target = fit_theta_target_only(data, tuning)
    if theta_meta is None:
        theta_meta, _ = fit_theta_meta(data, dr, tuning)
    decision = estimate_rho(data, dr, tuning, epsilon0, split_seed)
    chosen = theta_meta if decision.rho == 1 else theta_target
    est = ImputationEstimate(
        chosen.theta.copy(),
        "strifle",
        chosen.lam,
        {"selected": chosen.kind, "blocks": chosen.provenance.get("blocks")},
        rho=decision.rho,
    )
    return est, decision


# outcome model --------------------------------------------------------------


def ss_design(data: StudyData, theta_hat, link):
    """Target unlabeled rows pseudo-labeled by ``g(z' theta)``, then target labeled rows."""
    TU, TL = data.target_unlabeled, data.target_labeled
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape != (data.d,):
        raise ValueError(f"theta_hat must have length {data.d}")
    pseudo = as_link(link).mean(TU.Z @ theta_hat) if TU.n else np.zeros(0)
    X = np.vstack([TU.X, TL.X])
    y = np.concatenate([pseudo, TL.y])
    return X, y


def fit_beta_ss(data: StudyData, theta_hat, tuning: Tuning = None, method="SAS") -> OutcomeEstimate:
    """Semi-supervised outcome fit using imputed responses on target unlabeled rows."""
    tuning = _tuning(tuning)
    X, y = ss_design(data, theta_hat, tuning.link)
    tf = fit_cv(X, y, None, tuning.link, tuning.penalty, tuning.cv)
    return OutcomeEstimate(tf.coef.copy(), method, tf.lam)


def fit_beta_sup(data: StudyData, tuning: Tuning = None) -> OutcomeEstimate:
    """Supervised fit of y on x over the target labeled rows only."""
    tuning = _tuning(tuning)
    TL = data.target_labeled
    _require_labels(data, tuning.cv.folds if tuning.cv.lam is None else 1)
    tf = fit_cv(TL.X, TL.y, None, tuning.link, tuning.penalty, tuning.cv)
    return OutcomeEstimate(tf.coef.copy(), "SUP", tf.lam)


def fit_beta_cs(data: StudyData, dr: Optional[DensityRatioFit], tuning: Tuning = None) -> OutcomeEstimate:
    """Importance-weighted pooled supervised fit of y on x (covariate-shift correction only)."""
    tuning = _tuning(tuning)
    SL, TL = data.source_labeled, data.target_labeled
    w_src = np.ones(SL.n) if dr is None else dr.weights(SL.Z)
    X = np.vstack([SL.X, TL.X])
    y = np.concatenate([SL.y, TL.y])
    w = np.concatenate([w_src, np.ones(TL.n)])
    tf = fit_cv(X, y, w, tuning.link, tuning.penalty, tuning.cv)
    return OutcomeEstimate(tf.coef.copy(), "CS", tf.lam)


def fit_beta_transglm(
    data: StudyData, tuning: Tuning = None, epsilon0: float = 0.0, split_seed: int = 0
) -> OutcomeEstimate:
    """Two-step transfer GLM on x only, guarded by the same cross-fitted gate.

    Step 1 fits beta on the source labeled rows; step 2 fits a correction on
    the target labeled rows with the source fit as offset. The gate compares
    the transferred fit with SUP on held-out target halves.
    """
    tuning = _tuning(tuning)
    sup = fit_beta_sup(data, tuning)
    if data.n_S == 0:
        return OutcomeEstimate(sup.beta.copy(), "TransGLM", sup.lam, rho=0, extra={"delta": np.zeros_like(sup.beta)})
    SL, TL = data.source_labeled, data.target_labeled
    src = fit_cv(SL.X, SL.y, None, tuning.link, tuning.penalty, tuning.cv)
    b_src = src.coef

    def correct(X, y):
        tf = fit_cv(X, y, None, tuning.link, tuning.delta, tuning.cv, offset=X @ b_src)
        return b_src + tf.coef, tf

    halves = half_split(TL.n, split_seed)
    lt, ltr = [], []
    for k in range(2):
        fit_idx, eval_idx = halves[k], halves[1 - k]
        Xf, yf = TL.X[fit_idx], TL.y[fit_idx]
        b_t = fit_cv(Xf, yf, None, tuning.link, tuning.penalty, tuning.cv).coef
        b_tr, _ = correct(Xf, yf)
        Xe, ye = TL.X[eval_idx], TL.y[eval_idx]
        lt.append(heldout_loss(Xe, ye, b_t, tuning.link))
        ltr.append(heldout_loss(Xe, ye, b_tr, tuning.link))
    rho = int(np.mean(ltr) <= np.mean(lt) - epsilon0)
    b_full, corr = correct(TL.X, TL.y)
    beta = b_full if rho else sup.beta.copy()
    extra = {"beta_source": b_src, "delta": corr.coef.copy(), "loss_transfer": float(np.mean(ltr)), "loss_target": float(np.mean(lt))}
    return OutcomeEstimate(beta, "TransGLM", (src.lam, corr.lam) if rho else sup.lam, rho=rho, extra=extra)


# full suite -----------------------------------------------------------------


@dataclass
class EstimatorBundle:
    outcomes: dict
    thetas: dict
    decision: Optional[TransferDecision]
    dr: Optional[DensityRatioFit]
    seconds: dict


def fit_methods(
    data: StudyData,
    methods=METHODS,
    dr: Optional[DensityRatioFit] = None,
    tuning: Tuning = None,
    epsilon0: float = 0.0,
    split_seed: int = 0,
) -> EstimatorBundle:
    """Fit the requested outcome estimators, sharing intermediate fits.

    SAS and STRIFLE share the target-only imputation fit, Meta and STRIFLE the
    meta fit; STRIFLE reuses the outcome fit of whichever estimate it selects.
    """
    tuning = _tuning(tuning)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    needs_dr = {"CS", "Meta", "STRIFLE"} & set(methods)
    if needs_dr and dr is None:
        raise ValueError("methods CS/Meta/STRIFLE need a fitted density ratio")
    out, thetas, secs = {}, {}, {}
    decision = None
    cache = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        val = fn()
        secs[name] = secs.get(name, 0.0) + time.perf_counter() - t0
        return val

    if "SUP" in methods:
        out["SUP"] = timed("SUP", lambda: fit_beta_sup(data, tuning))
    if {"SAS", "STRIFLE"} & set(methods):
        thetas["target_only"] = timed("SAS", lambda: fit_theta_target_only(data, tuning))
    if {"Meta", "STRIFLE"} & set(methods):
        meta, pooled = timed("Meta", lambda: fit_theta_meta(data, dr, tuning))
        thetas["meta"], thetas["pooled"] = meta, pooled
    if "SAS" in methods:
        cache["target_only"] = timed("SAS", lambda: fit_beta_ss(data, thetas["target_only"].theta, tuning, "SAS"))
        out["SAS"] = cache["target_only"]
    if "Meta" in methods:
        cache["meta"] = timed("Meta", lambda: fit_beta_ss(data, thetas["meta"].theta, tuning, "Meta"))
        out["Meta"] = cache["meta"]
    if "STRIFLE" in methods:
        st, decision = timed(
            "STRIFLE",
            lambda: fit_theta_strifle(
                data, dr, tuning, epsilon0, split_seed, thetas["target_only"], thetas["meta"]
            ),
        )
        thetas["strifle"] = st
        key = "meta" if decision.rho == 1 else "target_only"
        if key not in cache:
            cache[key] = timed("STRIFLE", lambda: fit_beta_ss(data, st.theta, tuning, "STRIFLE"))
        base = cache[key]
        out["STRIFLE"] = OutcomeEstimate(base.beta.copy(), "STRIFLE", base.lam, rho=decision.rho)
    if "CS" in methods:
        out["CS"] = timed("CS", lambda: fit_beta_cs(data, dr, tuning))
    if "TransGLM" in methods:
        out["TransGLM"] = timed("TransGLM", lambda: fit_beta_transglm(data, tuning, epsilon0, split_seed))
    return EstimatorBundle(out, thetas, decision, dr, secs)
