"""Response vector and predictor matrix construction from records.

The response is ln(1 + citations). Predictors: length-class dummies (lowest
class is the reference), the continuous two-year journal impact factor, an
open-access dummy (reference "no"), ln(1 + n_funders), ln(n_countries), and
discipline/year dummies with pinned reference levels.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .discretize import BreakSet, assign_classes
from .errors import ConfigError, DataError, NumericalError
from .records import RecordSet
from .validation import check_weights, require_full_rank

DEFAULT_COVARIATES = ("journal_impact", "open_access", "funding", "intl_collab", "discipline", "year")


@dataclass(frozen=True)
class ModelSpec:
    """Which predictors enter the model and how categoricals are coded.

    discipline_mode "multi_hot" emits one membership dummy per non-reference
    label (records may belong to several); "primary" uses each record's
    lexicographically smallest label as its single discipline. Level
    vocabularies default to the data; pass them explicitly to apply a frozen
    spec to new data (unseen labels then raise).
    """

    length_breaks: BreakSet
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    discipline_mode: str = "multi_hot"
    discipline_levels: tuple[str, ...] | None = None
    year_levels: tuple[int, ...] | None = None
    discipline_reference: str | None = None
    year_reference: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        unknown = set(self.covariates) - set(DEFAULT_COVARIATES)
        if unknown:
            raise ConfigError(f"unknown covariates: {sorted(unknown)}")
        if self.discipline_mode not in ("multi_hot", "primary"):
            raise ConfigError(f"discipline_mode must be multi_hot or primary, got {self.discipline_mode!r}")


@dataclass(frozen=True)
class DesignMatrix:
    """Fully numeric regression problem: response, predictors with intercept,
    column metadata, optional calibration weights."""

    y: np.ndarray
    X: np.ndarray
    column_names: tuple[str, ...]
    row_ids: tuple[str, ...]
    weights: np.ndarray | None = None
    references: dict = field(default_factory=dict)
    column_labels: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["pub_id", "y"] + list(self.column_names)
            if self.weights is not None:
                header.append("weight")
            writer.writerow(header)
            for i in range(self.n):
                row = [self.row_ids[i], repr(float(self.y[i]))]
                row += [repr(float(v)) for v in self.X[i]]
                if self.weights is not None:
                    row.append(repr(float(self.weights[i])))
                writer.writerow(row)


def _resolve_levels(observed: list, explicit, reference, what: str):
    if explicit is not None:
        levels = list(explicit)
        unseen = set(observed) - set(levels)
        if unseen:
            raise DataError(f"unseen {what} value(s) not in the declared vocabulary: {sorted(unseen)}")
    else:
        levels = sorted(set(observed))
    if reference is None:
        reference = levels[0]
    elif reference not in levels:
        raise ConfigError(f"{what} reference {reference!r} not among levels {levels}")
    return levels, reference


def build_design(
    rs: RecordSet,
    spec: ModelSpec,
    w=None,
    validate: bool = True,
) -> DesignMatrix:
    """Assemble the DesignMatrix for a record set under a ModelSpec.

    Every record is assigned a length class from spec.length_breaks; dummies
    are emitted for classes 2..k. Column order: intercept, length classes,
    then the spec's covariates in order. With validate=True (default) the
    matrix is rejected if any non-intercept column is constant or the matrix
    is rank deficient (the error names a dependent column set).
    """
    if len(rs) == 0:
        raise DataError("cannot build a design matrix from an empty RecordSet")
    records = rs.records
    n = len(records)
    breaks = spec.length_breaks
    classes = assign_classes([r.report_length for r in records], breaks)

    columns: list[np.ndarray] = [np.ones(n)]
    names: list[str] = ["intercept"]
    labels: dict[str, str] = {"intercept": "intercept"}
    references: dict[str, str] = {}

    interval_labels = breaks.labels()
    references["length_class"] = f"class 1 {interval_labels[0]}"
    for cls in range(2, breaks.k + 1):
        columns.append((classes == cls).astype(float))
        name = f"length_class_{cls}"
        names.append(name)
        labels[name] = f"report length {interval_labels[cls - 1]}"

    for cov in spec.covariates:
        if cov == "journal_impact":
            columns.append(np.array([r.journal_impact for r in records], dtype=float))
            names.append("journal_impact")
            labels["journal_impact"] = "journal impact factor (2-year)"
        elif cov == "open_access":
            columns.append(np.array([1.0 if r.open_access else 0.0 for r in records]))
            names.append("open_access_yes")
            labels["open_access_yes"] = "open access (yes)"
            references["open_access"] = "no"
        elif cov == "funding":
            columns.append(np.log1p([r.n_funders for r in records]))
            names.append("log1p_funders")
            labels["log1p_funders"] = "ln(1 + funders)"
        elif cov == "intl_collab":
            columns.append(np.log([r.n_countries for r in records]))
            names.append("log_countries")
            labels["log_countries"] = "ln(countries)"
        elif cov == "discipline":
            if spec.discipline_mode == "primary":
                memberships = [{min(sorted(r.disciplines))} for r in records]
            else:
                memberships = [set(r.disciplines) for r in records]
            observed = sorted(set().union(*memberships))
            levels, ref = _resolve_levels(observed, spec.discipline_levels, spec.discipline_reference, "discipline")
            references["discipline"] = ref
            for level in levels:
                if level == ref:
                    continue
                columns.append(np.array([1.0 if level in m else 0.0 for m in memberships]))
                name = f"discipline:{level}"
                names.append(name)
                labels[name] = f"discipline {level}"
        elif cov == "year":
            observed = [r.pub_year for r in records]
            levels, ref = _resolve_levels(observed, spec.year_levels, spec.year_reference, "year")
            references["year"] = str(ref)
            for level in levels:
                if level == ref:
                    continue
                columns.append(np.array([1.0 if r.pub_year == level else 0.0 for r in records]))
                name = f"year:{level}"
                names.append(name)
                labels[name] = f"publication year {level}"

    X = np.column_stack(columns)
    y = np.log1p(np.array([r.citations for r in records], dtype=float))
    weights = None if w is None else check_weights(getattr(w, "weights", w), n, "calibration weights")

    if validate:
        spans = X.max(axis=0) - X.min(axis=0)
        constant = [names[j] for j in range(1, X.shape[1]) if spans[j] == 0.0]
        if constant:
            raise NumericalError(f"constant non-intercept column(s): {', '.join(constant)}")
        require_full_rank(X, tuple(names))

    return DesignMatrix(
        y=y,
        X=X,
        column_names=tuple(names),
        row_ids=tuple(r.pub_id for r in records),
        weights=weights,
        references=references,
        column_labels=labels,
    )
