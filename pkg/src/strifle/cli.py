"""Command-line front end: ``strifle {simulate,fit,oracle,report}``.

Each subcommand reads a single JSON config (``--config``); ``--seed``,
``--out``, ``--jobs`` and ``--methods`` override the matching config keys,
and ``STRIFLE_OUT`` / ``STRIFLE_JOBS`` override output directory and
parallelism when the flags are absent.

Exit codes: 0 success, 1 runtime failure, 2 validation failure. On failure a
JSON error record is printed to stderr (and written to ``error.json`` in the
output directory when one is known).

Example config for ``simulate``::

    {"sim": {"scenario": "C1", "reps": 2, "p": 10, "q": 3},
     "methods": ["SUP", "SAS"], "master_seed": 1,
     "oracle": {"oracle_n": 100000}}
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .density_ratio import BasisSpec, fit_dr_ridge_threshold
from .estimators import METHODS, Tuning, fit_methods
from .glm import LinkSpec, standardize
from .io import DataValidationError, Sidecar, read_rows_csv, read_study_csv, write_rows_csv, write_study_csv
from .penalty import PenaltySpec
from .simulation import (
    ReplicationSettings,
    SimConfig,
    cached_oracle_beta0,
    replication_study,
    run_replications,
)
from .solver import CVConfig, FitConfig

logger = logging.getLogger("strifle")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2
MODES = ("simulate", "fit", "oracle", "report")
REP_COLUMNS = ("method", "rep", "abs_bias", "l2_err", "auc", "rho", "seconds")
AGG_COLUMNS = ("scenario", "iota", "n_S", "method", "abs_bias", "l2_err", "auc", "reps_used", "rho_rate")
CONFIG_KEYS = {
    "mode", "sim", "methods", "master_seed", "parallelism", "output_dir", "penalty", "delta_penalty",
    "cv", "solver", "link", "epsilon0", "density_ratio", "oracle", "data", "standardize",
    "bias_mode", "export_data", "rep_cache", "inputs",
}


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


@dataclass
class RunConfig:
    """Validated run settings; see the module docstring for the JSON layout."""

    mode: str
    sim: Optional[SimConfig] = None
    methods: tuple = METHODS
    master_seed: int = 0
    parallelism: int = 1
    output_dir: str = "strifle_out"
    tuning: Tuning = field(default_factory=Tuning)
    epsilon0: float = 0.0
    ridge_lambda: float = 1e-5
    cutoff_const: float = 10.0
    oracle_n: int = 1_000_000
    oracle_cache: Optional[str] = None
    data_csv: Optional[str] = None
    data_sidecar: Optional[str] = None
    standardize: str = "per_population"
    bias_mode: str = "bias_of_mean"
    export_data: bool = False
    rep_cache: Optional[str] = None
    inputs: tuple = ()
    raw: dict = field(default_factory=dict)


def _sub(d, key, allowed):
    sub = d.get(key) or {}
    if not isinstance(sub, dict):
        raise ConfigError(f"{key} must be an object", field=key)
    bad = sorted(set(sub) - set(allowed))
    if bad:
        raise ConfigError(f"unknown key {key}.{bad[0]}", field=f"{key}.{bad[0]}")
    return sub


def _build(cls, kwargs, where):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}", field=where) from None


def parse_config(d: dict, mode: str) -> RunConfig:
    """Validate a JSON config dict for ``mode``; raises :class:`ConfigError`."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    bad = sorted(set(d) - CONFIG_KEYS)
    if bad:
        raise ConfigError(f"unknown config key {bad[0]!r}", field=bad[0])
    if "mode" in d and d["mode"] != mode:
        raise ConfigError(f"config mode {d['mode']!r} does not match subcommand {mode!r}", field="mode")
    rc = RunConfig(mode=mode, raw=d)

    methods = d.get("methods", list(METHODS))
    if isinstance(methods, str):
        methods = [m for m in methods.split(",") if m]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise ConfigError(f"methods: unknown method(s) {unknown}; expected a subset of {list(METHODS)}", field="methods")
    rc.methods = tuple(m for m in METHODS if m in methods)

    for key, typ in (("master_seed", int), ("parallelism", int), ("epsilon0", (int, float))):
        if key in d and (not isinstance(d[key], typ) or isinstance(d[key], bool)):
            raise ConfigError(f"{key} must be a number", field=key)
    rc.master_seed = int(d.get("master_seed", 0))
    rc.parallelism = int(d.get("parallelism", 1))
    if rc.parallelism < 1:
        raise ConfigError("parallelism must be at least 1", field="parallelism")
    rc.epsilon0 = float(d.get("epsilon0", 0.0))
    if rc.epsilon0 < 0:
        raise ConfigError("epsilon0 must be nonnegative", field="epsilon0")
    rc.output_dir = str(d.get("output_dir", rc.output_dir))

    pen = _build(PenaltySpec, {"family": "lasso", **_sub(d, "penalty", ("family", "a", "gamma"))}, "penalty")
    dpen = None
    if "delta_penalty" in d:
        dpen = _build(PenaltySpec, {"family": "lasso", **_sub(d, "delta_penalty", ("family", "a", "gamma"))}, "delta_penalty")
    solver = _build(FitConfig, _sub(d, "solver", ("tol", "max_iter", "grad_tol", "l1_radius")), "solver")
    cv = _build(CVConfig, {**_sub(d, "cv", ("folds", "n_lambda", "ratio", "lam")), "solver": solver}, "cv")
    link = _build(LinkSpec, {"kind": d.get("link", "logit")}, "link")
    rc.tuning = Tuning(pen, cv, link, dpen)

    dr = _sub(d, "density_ratio", ("ridge_lambda", "cutoff_const"))
    rc.ridge_lambda = float(dr.get("ridge_lambda", rc.ridge_lambda))
    rc.cutoff_const = float(dr.get("cutoff_const", rc.cutoff_const))
    rc.bias_mode = d.get("bias_mode", rc.bias_mode)
    if rc.bias_mode not in ("bias_of_mean", "mean_abs"):
        raise ConfigError("bias_mode must be bias_of_mean or mean_abs", field="bias_mode")
    rc.export_data = bool(d.get("export_data", False))
    rc.rep_cache = d.get("rep_cache")

    if mode in ("simulate", "oracle"):
        sim = dict(_sub(d, "sim", [f.name for f in dataclasses.fields(SimConfig)]))
        sim.setdefault("seed", rc.master_seed)
        rc.sim = _build(SimConfig, sim, "sim")
        orc = _sub(d, "oracle", ("oracle_n", "cache_dir"))
        rc.oracle_n = int(orc.get("oracle_n", rc.oracle_n))
        if rc.oracle_n < 1:
            raise ConfigError("oracle.oracle_n must be positive", field="oracle.oracle_n")
        rc.oracle_cache = orc.get("cache_dir")
    if mode == "fit":
        data = _sub(d, "data", ("csv", "sidecar"))
        for k in ("csv", "sidecar"):
            if k not in data:
                raise ConfigError(f"data.{k} is required in fit mode", field=f"data.{k}")
            if not Path(data[k]).exists():
                raise ConfigError(f"data.{k}: no such file {data[k]!r}", field=f"data.{k}")
        rc.data_csv, rc.data_sidecar = data["csv"], data["sidecar"]
        rc.standardize = d.get("standardize", rc.standardize)
        if rc.standardize not in ("per_population", "global", "none"):
            raise ConfigError("standardize must be per_population, global or none", field="standardize")
    if mode == "report":
        rc.inputs = tuple(d.get("inputs", ()))
    return rc


def config_hash(rc: RunConfig) -> str:
    blob = {
        "mode": rc.mode,
        "sim": rc.sim.to_dict() if rc.sim else None,
        "methods": list(rc.methods),
        "master_seed": rc.master_seed,
        "tuning": repr(rc.tuning),
        "epsilon0": rc.epsilon0,
        "density_ratio": [rc.ridge_lambda, rc.cutoff_const],
        "oracle_n": rc.oracle_n,
        "data": [rc.data_csv, rc.data_sidecar, rc.standardize],
        "bias_mode": rc.bias_mode,
        "inputs": list(rc.inputs),
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


def versions() -> dict:
    from . import __version__

    return {"strifle": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_manifest(out: Path, rc: RunConfig, outputs, started):
    man = {
        "mode": rc.mode,
        "config": rc.raw,
        "config_hash": config_hash(rc),
        "master_seed": rc.master_seed,
        "parallelism": rc.parallelism,
        "versions": versions(),
        "outputs": sorted(str(o) for o in outputs),
        "wall_seconds": time.time() - started,
    }
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))


# subcommands ---------------------------------------------------------------


def _oracle(rc: RunConfig, out: Path):
    cache = Path(rc.oracle_cache) if rc.oracle_cache else out / "oracle_cache"
    s = rc.sim
    return cached_oracle_beta0(cache, s.scenario, s.iota, rc.oracle_n, p=s.p, q=s.q, mis_prime_s_index=s.mis_prime_s_index)


def cmd_oracle(rc: RunConfig, out: Path) -> list:
    orc = _oracle(rc, out)
    path = out / "oracle.json"
    path.write_text(json.dumps(orc.to_dict(), indent=2))
    logger.info("oracle beta0 for %s: gradient norm %.2e", rc.sim.scenario, orc.how["grad_norm"])
    return [path]


def cmd_simulate(rc: RunConfig, out: Path) -> list:
    """Run replications and write per-rep and aggregate CSVs."""
    orc = _oracle(rc, out)
    settings = ReplicationSettings(rc.methods, rc.tuning, rc.epsilon0, rc.ridge_lambda, rc.cutoff_const)
    done = []

    def progress(rows):
        done.append(rows[0].rep)
        logger.info("replication %d finished (%d/%d)", rows[0].rep, len(done), rc.sim.reps)

    agg, results = run_replications(
        rc.sim, rc.methods, rc.parallelism, orc, settings, cache_dir=rc.rep_cache, progress=progress
    )
    if rc.bias_mode != "bias_of_mean":
        from .simulation import aggregate

        agg = aggregate(results, orc.beta0, rc.sim, rc.bias_mode)
    reps_path, agg_path = out / "reps.csv", out / "aggregate.csv"
    rep_rows = sorted((r.to_dict() for r in results), key=lambda r: (r["rep"], METHODS.index(r["method"])))
    write_rows_csv(reps_path, rep_rows, REP_COLUMNS + ("error",))
    write_rows_csv(agg_path, [dataclasses.asdict(a) for a in agg], AGG_COLUMNS)
    outputs = [reps_path, agg_path]
    if rc.export_data:
        sim, _ = replication_study(rc.sim, 0, orc.scaling)
        csv_path, side_path = out / "data_rep0000.csv", out / "data_rep0000.sidecar.json"
        write_study_csv(csv_path, sim.data, side_path)
        outputs += [csv_path, side_path]
    failed = sorted({r.rep for r in results if r.error is not None})
    if len(failed) == rc.sim.reps:
        raise RuntimeError("every replication failed; see reps.csv")
    return outputs


def fit_study(data, rc: RunConfig) -> dict:
    """Standardize, fit the requested methods, and map coefficients back to raw columns.

    This is the in-process counterpart of ``strifle fit``.
    """
    rec = None
    if rc.standardize != "none":
        data, rec = standardize(data, per_population=rc.standardize == "per_population")
    cv_seed, split_seed = np.random.SeedSequence(rc.master_seed).generate_state(2)
    tuning = dataclasses.replace(rc.tuning, cv=rc.tuning.cv.reseeded(int(cv_seed)))
    dr = None
    if {"CS", "Meta", "STRIFLE"} & set(rc.methods):
        dr = fit_dr_ridge_threshold(data, BasisSpec(), rc.ridge_lambda, rc.cutoff_const)
    bundle = fit_methods(data, rc.methods, dr, tuning, rc.epsilon0, int(split_seed))
    methods = {}
    for m in rc.methods:
        est = bundle.outcomes[m]
        d = est.to_dict()
        d["beta_standardized"] = d.pop("beta")
        d["beta"] = [float(b) for b in (rec.unscale_coef(est.beta, "target") if rec else est.beta)]
        d["seconds"] = bundle.seconds.get(m, 0.0)
        methods[m] = d
    res = {
        "methods": methods,
        "seeds": {"master_seed": rc.master_seed, "cv_seed": int(cv_seed), "split_seed": int(split_seed)},
        "sizes": {"n_T": data.n_T, "N_T": data.N_T, "n_S": data.n_S, "N_S": data.N_S, "p": data.p, "q": data.q},
        "standardize": rc.standardize,
        "lambdas": {k: v.lam for k, v in bundle.thetas.items()},
    }
    if bundle.decision is not None:
        dec = bundle.decision
        res["transfer_decision"] = {"rho": dec.rho, "epsilon0": dec.epsilon0, "loss_meta": dec.loss_meta, "loss_target": dec.loss_target}
    if dr is not None:
        res["density_ratio"] = {"zeta": [float(z) for z in dr.zeta], "support_size": int(dr.support_size), "method": dr.method}
    return res


def cmd_fit(rc: RunConfig, out: Path) -> list:
    try:
        data = read_study_csv(rc.data_csv, Sidecar.load(rc.data_sidecar))
    except DataValidationError as exc:
        raise ConfigError(str(exc), field=exc.field) from None
    if data.n_T < 2:
        raise ConfigError("fit needs at least two labeled target rows", field="data.csv")
    res = fit_study(data, rc)
    path = out / "estimates.json"
    path.write_text(json.dumps(res, indent=2))
    return [path]


def format_bias(abs_bias) -> str:
    """|Bias| reported in units of 1e-2 with two decimals."""
    return f"{float(abs_bias) * 100:.2f}"


def cmd_report(rc: RunConfig, out: Path) -> list:
    """Merge aggregate CSVs into one table; duplicate (scenario, iota, n_S, method) keys are an error."""
    if not rc.inputs:
        raise ConfigError("report needs at least one aggregate CSV", field="inputs")
    rows, seen = [], {}
    for path in rc.inputs:
        if not Path(path).exists():
            raise ConfigError(f"no such file {path!r}", field="inputs")
        for r in read_rows_csv(path):
            missing = [c for c in AGG_COLUMNS if c not in r]
            if missing:
                raise ConfigError(f"{path}: not an aggregate CSV (lacks {missing})", field="inputs")
            key = (r["scenario"], r["iota"], r["n_S"], r["method"])
            if key in seen:
                raise ConfigError(f"duplicate row for scenario/method {key} in {seen[key]} and {path}", field="inputs")
            seen[key] = path
            rows.append(r)
    table = [
        {
            "scenario": r["scenario"],
            "iota": r["iota"],
            "n_S": r["n_S"],
            "method": r["method"],
            "abs_bias_x100": format_bias(r["abs_bias"]),
            "l2_err": f"{float(r['l2_err']):.2f}",
            "auc": f"{float(r['auc']):.2f}",
            "reps_used": r["reps_used"],
        }
        for r in rows
    ]
    cols = ("scenario", "iota", "n_S", "method", "abs_bias_x100", "l2_err", "auc", "reps_used")
    path = out / "report.csv"
    write_rows_csv(path, table, cols)
    widths = [max(len(c), *(len(str(t[c])) for t in table)) for c in cols]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(str(t[c]).rjust(w) for c, w in zip(cols, widths)) for t in table]
    txt = out / "report.txt"
    txt.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return [path, txt]


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "oracle": cmd_oracle, "report": cmd_report}


# entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="strifle", description="Semi-supervised transfer learning for GLMs under covariate shift.")
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, help="concurrent replications")
        sp.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
        sp.add_argument("-v", "--verbose", action="store_true")
        if mode == "report":
            sp.add_argument("inputs", nargs="*", help="aggregate CSV files")
    return ap


def _error_record(code, exc, field=None):
    kind = "validation" if code == EXIT_VALIDATION else "runtime"
    return {"status": "error", "exit_code": code, "kind": kind, "field": field, "type": type(exc).__name__, "message": str(exc)}


def _fail(code, exc, out: Optional[Path], field=None):
    rec = _error_record(code, exc, field)
    print(json.dumps(rec), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(rec, indent=2))
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the validation code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = {}
        if args.config:
            try:
                cfg = json.loads(Path(args.config).read_text())
            except FileNotFoundError:
                raise ConfigError(f"no such config file {args.config!r}", field="config") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}", field="config") from None
            if not isinstance(cfg, dict):
                raise ConfigError("config must be a JSON object", field="config")
        if args.seed is not None:
            cfg["master_seed"] = args.seed
            if "sim" in cfg:
                cfg["sim"] = {**cfg["sim"], "seed": args.seed}
        if args.methods:
            cfg["methods"] = args.methods
        out_dir = args.out or os.environ.get("STRIFLE_OUT") or cfg.get("output_dir") or "strifle_out"
        cfg["output_dir"] = out_dir
        out = Path(out_dir)
        jobs = args.jobs if args.jobs is not None else os.environ.get("STRIFLE_JOBS")
        if jobs is not None:
            try:
                cfg["parallelism"] = int(jobs)
            except ValueError:
                raise ConfigError("jobs must be an integer", field="parallelism") from None
        if args.mode == "report" and args.inputs:
            cfg["inputs"] = list(args.inputs)
        rc = parse_config(cfg, args.mode)
        started = time.time()
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.mode](rc, out)
        write_manifest(out, rc, outputs, started)
    except ConfigError as exc:
        return _fail(EXIT_VALIDATION, exc, out, exc.field)
    except Exception as exc:  # stable contract: anything else is a runtime failure
        logger.debug("%s", traceback.format_exc())
        return _fail(EXIT_RUNTIME, exc, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
