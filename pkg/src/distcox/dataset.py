"""Survival records and CSV ingestion."""
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import EmptyAfterFiltering, ParseError, SchemaError

log = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none", "."}


@dataclass
class Dataset:
    """``n`` subjects: observed time, event flag, accurate covariates ``z``,
    confounder ``u``, distorted covariate ``xtilde`` and optionally the true ``x``."""
    time: np.ndarray
    event: np.ndarray
    z: np.ndarray
    u: Optional[np.ndarray] = None
    xtilde: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    z_names: list = field(default_factory=list)
    strata: Optional[np.ndarray] = None
    rejected: list = field(default_factory=list)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(len(self.time), -1)
        if not self.z_names:
            self.z_names = [f"z{k + 1}" for k in range(self.z.shape[1])]

    @property
    def n(self):
        return len(self.time)

    def design(self, method):
        """Design matrix ``[z, covariate]`` for ``naive`` (xtilde) or ``oracle`` (x)."""
        col = {"naive": self.xtilde, "oracle": self.x}.get(method)
        if col is None:
            raise ValueError(f"no covariate available for method {method!r}")
        return np.column_stack([self.z, col])

    def to_csv(self, path):
        """Write ``time, event, <z names>, xtilde, u[, x]`` with 17 significant digits."""
        cols = [("time", self.time), ("event", self.event)]
        cols += [(name, self.z[:, k]) for k, name in enumerate(self.z_names)]
        cols += [(name, v) for name, v in (("xtilde", self.xtilde), ("u", self.u), ("x", self.x)) if v is not None]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(name for name, _ in cols) + "\n")
            for i in range(self.n):
                fh.write(",".join(str(int(v[i])) if name == "event" else format(float(v[i]), ".17g")
                                  for name, v in cols) + "\n")

    def estimator_input(self):
        """``(X, y)`` in the layout expected by :class:`DistortedCovariateCoxPH`."""
        X = np.column_stack([self.z, self.xtilde, self.u])
        y = np.column_stack([self.time, self.event])
        return X, y


@dataclass
class ColumnMapping:
    time: str
    event: str
    distorted: Optional[str] = None
    confounder: Optional[str] = None
    covariates: tuple = ()
    truth: Optional[str] = None
    strata: Optional[str] = None

    def numeric_columns(self):
        cols = [self.time, self.event, self.distorted, self.confounder, *self.covariates, self.truth]
        return list(dict.fromkeys(c for c in cols if c is not None))

    def validate(self):
        # the distorted and true covariate may share a column (no distortion)
        cols = [self.time, self.event, self.distorted, self.confounder, *self.covariates]
        cols = [c for c in cols if c is not None] + ([self.strata] if self.strata else [])
        if self.truth is not None and self.truth != self.distorted:
            cols.append(self.truth)
        dupes = {c for c in cols if cols.count(c) > 1}
        if dupes:
            raise SchemaError(f"columns mapped more than once: {sorted(dupes)}")


def _parse_float(text, row, column):
    t = text.strip()
    if t.lower() in _MISSING:
        return None
    try:
        value = float(t)
    except ValueError:
        raise ParseError(row, column, f"not a number: {text!r}") from None
    return value if math.isfinite(value) else None


def ingest_csv(path, mapping):
    """Read a header-row CSV into a :class:`Dataset`.

    Rows are numbered from 1 (first data row). Rows with missing or
    non-finite values in a mapped column are dropped and listed in
    ``Dataset.rejected``; malformed values raise :class:`ParseError`.
    Unmapped columns are ignored.
    """
    mapping.validate()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise SchemaError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        reader.fieldnames = header
        wanted = mapping.numeric_columns() + ([mapping.strata] if mapping.strata else [])
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: column(s) not found: {', '.join(missing)}")

        values = {c: [] for c in mapping.numeric_columns()}
        strata = []
        rejected = []
        for row_no, rec in enumerate(reader, start=1):
            parsed = {}
            bad = None
            for col in mapping.numeric_columns():
                raw = rec.get(col)
                v = _parse_float(raw if raw is not None else "", row_no, col)
                if v is None:
                    bad = bad or col
                    continue
                parsed[col] = v
            if bad is None:
                ev = parsed[mapping.event]
                if ev not in (0.0, 1.0):
                    raise ParseError(row_no, mapping.event, f"event must be 0 or 1, got {rec[mapping.event]!r}")
                if parsed[mapping.time] < 0:
                    raise ParseError(row_no, mapping.time, "negative time")
            if bad is not None:
                rejected.append((row_no, bad, "missing or non-finite"))
                log.warning("row %d rejected: missing or non-finite %r", row_no, bad)
                continue
            for col, v in parsed.items():
                values[col].append(v)
            if mapping.strata:
                strata.append(rec[mapping.strata].strip())

    if not values[mapping.time]:
        raise EmptyAfterFiltering(f"{path}: no usable rows")

    def arr(col):
        return None if col is None else np.asarray(values[col], dtype=float)

    z = np.column_stack([arr(c) for c in mapping.covariates]) if mapping.covariates else np.empty((len(values[mapping.time]), 0))
    return Dataset(
        time=arr(mapping.time),
        event=arr(mapping.event).astype(int),
        z=z,
        u=arr(mapping.confounder),
        xtilde=arr(mapping.distorted),
        x=arr(mapping.truth),
        z_names=list(mapping.covariates),
        strata=np.asarray(strata) if mapping.strata else None,
        rejected=rejected,
    )
