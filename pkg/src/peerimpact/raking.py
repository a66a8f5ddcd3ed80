"""Raking-ratio calibration: iterative proportional fitting of per-record
weights until weighted categorical marginals match population targets.

Margin variables are resolved against PublicationRecord features through
`record_category`; the IPF core itself works on plain category-code arrays
and is also exposed through the sklearn-style RakingCalibrator.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError, NumericalError
from .records import RecordSet, PublicationRecord

# Multiplicative updates toward a zero-target category are floored here
# instead of silently dropping the record.
WEIGHT_FLOOR = 1e-12

COUNT_BAND_LABELS = ("1", "2", "3", "4+")
FUNDING_BAND_LABELS = ("0", "1", "2", "3", "4+")


def funding_band(n_funders: int) -> str:
    return FUNDING_BAND_LABELS[min(n_funders, 4)]


def country_band(n_countries: int) -> str:
    return COUNT_BAND_LABELS[min(n_countries, 4) - 1]


def record_category(record: PublicationRecord, variable: str) -> str:
    """Categorical feature of a record for a margin variable.

    Supported: pub_year, open_access, funding_band, country_band,
    impact_class, discipline:<label> (membership yes/no) and
    funding:<band> (band membership yes/no).
    """
    if variable == "pub_year":
        return str(record.pub_year)
    if variable == "open_access":
        return "yes" if record.open_access else "no"
    if variable == "funding_band":
        return funding_band(record.n_funders)
    if variable == "country_band":
        return country_band(record.n_countries)
    if variable == "impact_class":
        return record.impact_class
    if variable.startswith("discipline:"):
        label = variable.split(":", 1)[1]
        return "yes" if label in record.disciplines else "no"
    if variable.startswith("funding:"):
        band = variable.split(":", 1)[1]
        return "yes" if funding_band(record.n_funders) == band else "no"
    raise ConfigError(f"unknown margin variable {variable!r}")


@dataclass(frozen=True)
class MarginTarget:
    """Target population shares for one categorical variable."""

    variable: str
    shares: Mapping[str, float]

    def __post_init__(self):
        shares = dict(self.shares)
        if any(s < 0 for s in shares.values()):
            raise ConfigError(f"margin {self.variable!r} has negative shares")
        total = sum(shares.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"margin {self.variable!r} shares sum to {total}, expected 1")
        object.__setattr__(self, "shares", shares)


@dataclass(frozen=True)
class CalibrationSpec:
    """Ordered margins plus convergence controls. Sweep order is the given
    margin order; the fixed point is order-independent but iterate paths are
    not, so order is pinned for determinism."""

    margins: tuple[MarginTarget, ...]
    tol: float = 1e-8
    max_iter: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "margins", tuple(self.margins))
        if self.tol <= 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")

    def to_json(self) -> str:
        payload = {
            "margins": [{"variable": m.variable, "shares": dict(m.shares)} for m in self.margins],
            "tol": self.tol,
            "max_iter": self.max_iter,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationSpec":
        payload = json.loads(text)
        margins = tuple(
            MarginTarget(variable=m["variable"], shares={str(k): float(v) for k, v in m["shares"].items()})
            for m in payload["margins"]
        )
        return cls(margins=margins, tol=float(payload.get("tol", 1e-8)), max_iter=int(payload.get("max_iter", 1000)))


@dataclass(frozen=True)
class WeightVector:
    """Per-record calibration weights aligned to a RecordSet."""

    weights: np.ndarray
    iterations_used: int
    converged: bool
    final_deviation: float
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0):
            raise NumericalError("calibration weights must stay strictly positive")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)

    def summary(self) -> dict:
        return {
            "n": int(len(self.weights)),
            "min": float(self.weights.min()),
            "max": float(self.weights.max()),
            "mean": float(self.weights.mean()),
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "final_deviation": self.final_deviation,
        }

    def save_csv(self, rs: RecordSet, path: str | Path) -> None:
        if len(self.weights) != len(rs):
            raise DataError("weight vector not aligned to the record set")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pub_id", "weight"])
            for record, w in zip(rs.records, self.weights):
                writer.writerow([record.pub_id, repr(float(w))])


def load_weights_csv(rs: RecordSet, path: str | Path) -> WeightVector:
    """Read a (pub_id, weight) CSV and align it to rs by pub_id.

    The file may cover a superset of rs (e.g. weights computed before an
    influence exclusion); every record in rs must be covered exactly once.
    """
    by_id: dict[str, float] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            pid = row["pub_id"]
            if pid in by_id:
                raise DataError(f"duplicate pub_id {pid!r} in weight file {path}")
            by_id[pid] = float(row["weight"])
    missing = [r.pub_id for r in rs.records if r.pub_id not in by_id]
    if missing:
        raise DataError(f"weight file {path} missing pub_id(s): {missing[:5]}")
    return WeightVector(
        weights=np.array([by_id[r.pub_id] for r in rs.records]),
        iterations_used=0,
        converged=True,
        final_deviation=0.0,
        notes=(f"loaded from {path}",),
    )


def _encode_margins(
    label_columns: Sequence[np.ndarray], margins: Sequence[MarginTarget]
) -> tuple[list[np.ndarray], list[np.ndarray], list[list[str]]]:
    """Map label columns to integer codes against each margin's category list.

    Categories observed in the sample but absent from the target map get an
    implicit zero target; a positive-target category with no sample support is
    an error (the multiplicative update cannot create mass from nothing).
    """
    codes, targets, cats = [], [], []
    for column, margin in zip(label_columns, margins):
        observed = sorted(set(column.tolist()))
        categories = list(margin.shares.keys())
        for cat in observed:
            if cat not in margin.shares:
                categories.append(cat)
        index = {c: i for i, c in enumerate(categories)}
        observed_set = set(observed)
        for cat, share in margin.shares.items():
            if share > 0 and cat not in observed_set:
                raise DataError(
                    f"margin {margin.variable!r} targets category {cat!r} "
                    f"(share {share}) but the sample contains no such record"
                )
        codes.append(np.array([index[c] for c in column.tolist()], dtype=np.int64))
        targets.append(np.array([margin.shares.get(c, 0.0) for c in categories], dtype=float))
        cats.append(categories)
    return codes, targets, cats


def _ipf(
    codes: list[np.ndarray],
    targets: list[np.ndarray],
    tol: float,
    max_iter: int,
    initial: np.ndarray | None,
) -> tuple[np.ndarray, int, bool, float, bool]:
    n = codes[0].shape[0]
    w = np.ones(n) if initial is None else initial.astype(float).copy()
    floored = False
    sweeps = 0
    deviation = np.inf
    for sweeps in range(1, max_iter + 1):
        for code, target in zip(codes, targets):
            total = w.sum()
            share = np.bincount(code, weights=w, minlength=target.shape[0]) / total
            ratio = np.ones_like(target)
            np.divide(target, share, out=ratio, where=share > 0)
            w = w * ratio[code]
            if np.any(w < WEIGHT_FLOOR):
                w = np.maximum(w, WEIGHT_FLOOR)
                floored = True
        deviation = 0.0
        total = w.sum()
        for code, target in zip(codes, targets):
            share = np.bincount(code, weights=w, minlength=target.shape[0]) / total
            deviation = max(deviation, float(np.abs(share - target).max()))
        if deviation <= tol:
            return w, sweeps, True, deviation, floored
    return w, sweeps, False, deviation, floored


def rake_labels(
    label_columns: Sequence[np.ndarray],
    margins: Sequence[MarginTarget],
    tol: float = 1e-8,
    max_iter: int = 1000,
    initial: np.ndarray | None = None,
) -> WeightVector:
    """IPF over pre-extracted label columns (one per margin, aligned rows)."""
    if len(label_columns) != len(margins):
        raise ConfigError(f"{len(label_columns)} label columns for {len(margins)} margins")
    if not margins:
        raise ConfigError("calibration needs at least one margin")
    n = label_columns[0].shape[0]
    if n == 0:
        raise DataError("cannot calibrate an empty sample")
    codes, targets, _ = _encode_margins(label_columns, margins)
    w, sweeps, converged, deviation, floored = _ipf(codes, targets, tol, max_iter, initial)
    w = w * (n / w.sum())  # normalize to mean weight 1; downstream WLS is scale-invariant
    notes = []
    if floored:
        notes.append(f"weights floored at {WEIGHT_FLOOR} for zero-target categories present in the sample")
    if not converged:
        notes.append(f"stopped at max_iter={max_iter} with deviation {deviation}")
    return WeightVector(
        weights=w,
        iterations_used=sweeps,
        converged=converged,
        final_deviation=float(deviation),
        notes=tuple(notes),
    )


def rake(rs: RecordSet, spec: CalibrationSpec, initial: np.ndarray | None = None) -> WeightVector:
    """Calibrate record weights so weighted marginals hit the spec targets.

    Cycles over the margins in spec order, multiplying each record's weight by
    (target share)/(current weighted share) for its category, until the
    maximum absolute marginal deviation is <= spec.tol or max_iter sweeps have
    run. Weights are normalized to mean 1. `initial` allows warm starts from a
    previous WeightVector (fixed-point behavior: an already-calibrated start
    is returned unchanged up to floating-point error).
    """
    if len(rs) == 0:
        raise DataError("cannot calibrate an empty RecordSet")
    columns = [
        np.array([record_category(r, m.variable) for r in rs.records], dtype=object)
        for m in spec.margins
    ]
    return rake_labels(columns, spec.margins, tol=spec.tol, max_iter=spec.max_iter, initial=initial)


def weighted_marginals(rs: RecordSet, w: WeightVector | np.ndarray, variable: str) -> dict[str, float]:
    """Weighted share of each category of `variable`; shares sum to 1."""
    weights = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if weights.shape[0] != len(rs):
        raise DataError(f"weights length {weights.shape[0]} does not match {len(rs)} records")
    totals: dict[str, float] = {}
    for record, weight in zip(rs.records, weights):
        cat = record_category(record, variable)
        totals[cat] = totals.get(cat, 0.0) + float(weight)
    grand = sum(totals.values())
    return {cat: value / grand for cat, value in sorted(totals.items())}


class RakingCalibrator(BaseEstimator):
    """sklearn-style wrapper around the IPF core.

    fit(X) expects one column of category labels per margin, aligned with the
    `margins` parameter order (a 2-D object array or list of rows). After fit:
    weights_, n_iter_, converged_, final_deviation_.
    """

    def __init__(self, margins: Sequence[MarginTarget] = (), tol: float = 1e-8, max_iter: int = 1000):
        self.margins = margins
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        arr = np.asarray(X, dtype=object)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise DataError(f"X must be 2-D (records x margins), got shape {arr.shape}")
        if arr.shape[1] != len(self.margins):
            raise ConfigError(f"X has {arr.shape[1]} columns for {len(self.margins)} margins")
        columns = [np.array([str(v) for v in arr[:, j]], dtype=object) for j in range(arr.shape[1])]
        result = rake_labels(columns, tuple(self.margins), tol=self.tol, max_iter=self.max_iter)
        self.weights_ = result.weights
        self.n_iter_ = result.iterations_used
        self.converged_ = result.converged
        self.final_deviation_ = result.final_deviation
        return self
