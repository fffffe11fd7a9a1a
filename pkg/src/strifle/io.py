"""CSV ingestion with a JSON column-role sidecar, and JSON/CSV writers.

The sidecar names the columns that carry each role::

    {"population_col": "pop", "labeled_col": "lab", "y_col": "y",
     "x_cols": ["x1", "x2"], "s_cols": ["s1"]}

Population values are ``target``/``source`` (``T``/``S`` and ``0``/``1``
are accepted too); labeled flags accept ``1/0``, ``true/false``, ``yes/no``.
An intercept column is prepended to ``X`` on load.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .glm import ObservationBlock, StudyData, empty_block

SIDECAR_KEYS = ("population_col", "labeled_col", "y_col", "x_cols", "s_cols")

_POP = {"target": "target", "t": "target", "0": "target", "source": "source", "s": "source", "1": "source"}
_FLAG = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}


class DataValidationError(ValueError):
    """Malformed input data; ``field`` names the offending column or key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class Sidecar:
    population_col: str
    labeled_col: str
    y_col: str
    x_cols: tuple
    s_cols: tuple

    @classmethod
    def from_dict(cls, d: dict) -> "Sidecar":
        missing = [k for k in SIDECAR_KEYS if k not in d]
        if missing:
            raise DataValidationError(f"sidecar lacks keys {missing}", field=missing[0])
        extra = sorted(set(d) - set(SIDECAR_KEYS))
        if extra:
            raise DataValidationError(f"unknown sidecar keys {extra}", field=extra[0])
        for k in ("x_cols", "s_cols"):
            if not isinstance(d[k], list):
                raise DataValidationError(f"{k} must be a list of column names", field=k)
        return cls(d["population_col"], d["labeled_col"], d["y_col"], tuple(d["x_cols"]), tuple(d["s_cols"]))

    @classmethod
    def load(cls, path) -> "Sidecar":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "population_col": self.population_col,
            "labeled_col": self.labeled_col,
            "y_col": self.y_col,
            "x_cols": list(self.x_cols),
            "s_cols": list(self.s_cols),
        }


def fmt_float(v) -> str:
    """Shortest decimal string that reads back to the same double."""
    return repr(float(v))


def _parse_float(text, col, row):
    try:
        v = float(text)
    except ValueError:
        raise DataValidationError(f"row {row}: column {col!r} is not numeric: {text!r}", field=col) from None
    if not np.isfinite(v):
        raise DataValidationError(f"row {row}: column {col!r} is not finite", field=col)
    return v


def read_study_csv(csv_path, sidecar) -> StudyData:
    """Load a CSV into the four observation blocks named by the sidecar."""
    sc = sidecar if isinstance(sidecar, Sidecar) else Sidecar.load(sidecar)
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [sc.population_col, sc.labeled_col, sc.y_col, *sc.x_cols, *sc.s_cols]
        absent = [c for c in needed if c not in header]
        if absent:
            raise DataValidationError(f"CSV lacks columns {absent}", field=absent[0])
        rows = {(pop, lab): ([], [], []) for pop in ("target", "source") for lab in (True, False)}
        for i, rec in enumerate(reader, start=2):
            pop = _POP.get(rec[sc.population_col].strip().lower())
            if pop is None:
                raise DataValidationError(f"row {i}: unknown population {rec[sc.population_col]!r}", field=sc.population_col)
            lab = _FLAG.get(rec[sc.labeled_col].strip().lower())
            if lab is None:
                raise DataValidationError(f"row {i}: bad labeled flag {rec[sc.labeled_col]!r}", field=sc.labeled_col)
            xs, ss, ys = rows[(pop, lab)]
            xs.append([_parse_float(rec[c], c, i) for c in sc.x_cols])
            ss.append([_parse_float(rec[c], c, i) for c in sc.s_cols])
            ytext = (rec[sc.y_col] or "").strip()
            if lab:
                if ytext == "":
                    raise DataValidationError(f"row {i}: labeled row has no {sc.y_col!r} value", field=sc.y_col)
                ys.append(_parse_float(ytext, sc.y_col, i))
    p, q = len(sc.x_cols) + 1, len(sc.s_cols)

    def block(pop, lab):
        xs, ss, ys = rows[(pop, lab)]
        if not xs:
            return empty_block(p, q, pop, lab)
        X = np.hstack([np.ones((len(xs), 1)), np.array(xs, dtype=float).reshape(len(xs), p - 1)])
        S = np.array(ss, dtype=float).reshape(len(xs), q)
        return ObservationBlock(X, S, np.array(ys) if lab else None, pop, lab)

    return StudyData(block("target", True), block("target", False), block("source", True), block("source", False))


def write_study_csv(csv_path, data: StudyData, sidecar_path=None) -> Sidecar:
    """Write a study in the sidecar layout; numbers use shortest round-trip form."""
    sc = Sidecar(
        "population",
        "labeled",
        "y",
        tuple(f"x{j}" for j in range(1, data.p)),
        tuple(f"s{j}" for j in range(1, data.q + 1)),
    )
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([sc.population_col, sc.labeled_col, sc.y_col, *sc.x_cols, *sc.s_cols])
        for b in data.blocks:
            for i in range(b.n):
                y = fmt_float(b.y[i]) if b.labeled else ""
                w.writerow([b.population, int(b.labeled), y, *map(fmt_float, b.X[i, 1:]), *map(fmt_float, b.S[i])])
    if sidecar_path is not None:
        Path(sidecar_path).write_text(json.dumps(sc.to_dict(), indent=2))
    return sc


def write_rows_csv(path, rows, columns):
    """Write a list of mappings; floats in shortest round-trip form, None as empty."""

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return fmt_float(v)
        return str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([cell(r.get(c)) for c in columns])


def read_rows_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
