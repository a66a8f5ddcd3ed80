"""Weighted least squares on the log1p response with heteroscedasticity-
consistent (sandwich) covariance.

Fitting goes through a QR decomposition of the sqrt-weight-scaled design, not
the normal equations. Calibration weights act as precision weights; unit
weights reduce exactly to OLS. All four HC variants are available; HC1 is the
default for inference.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.stats import norm
from sklearn.base import BaseEstimator, RegressorMixin

from .design import DesignMatrix
from .errors import ConfigError, DataError, NumericalError
from .validation import RANK_TOL, check_matrix, check_weights, require_full_rank

HC_VARIANTS = ("HC0", "HC1", "HC2", "HC3")
# Normal-approximation CI half-width multiplier; n is large enough downstream
# that t vs z is immaterial.
CI_MULTIPLIER = 1.96
SIGNIFICANCE_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


@dataclass(frozen=True)
class FitResult:
    """Coefficients plus everything diagnostics need: residuals, leverage,
    classical and sandwich covariance, and the originating design."""

    coefficients: np.ndarray
    cov_classical: np.ndarray
    cov_robust: np.ndarray
    robust_variant: str
    residuals: np.ndarray
    fitted: np.ndarray
    hat_diag: np.ndarray
    sigma2: float
    n: int
    p: int
    weighted: bool
    design: DesignMatrix
    r_inverse: np.ndarray

    @property
    def column_names(self) -> tuple[str, ...]:
        return self.design.column_names

    @property
    def perfect_fit(self) -> bool:
        """True when residual variance is pure rounding noise relative to the
        response scale, so any inference on it is degenerate."""
        return self.sigma2 <= 1e-24 * max(float(np.mean(self.design.y**2)), 1e-300)

    def weight_vector(self) -> np.ndarray:
        if self.design.weights is None:
            return np.ones(self.n)
        return self.design.weights


def fit_wls(dm: DesignMatrix) -> FitResult:
    """Minimize sum_i w_i (y_i - x_i.beta)^2 via QR on sqrt(w)-scaled data.

    Raises NumericalError on rank deficiency (naming a dependent column set)
    or non-positive weights. With unit weights this is exactly OLS.
    """
    X = check_matrix(dm.X, "design matrix")
    y = np.asarray(dm.y, dtype=float)
    n, p = X.shape
    if n <= p:
        raise NumericalError(f"need more rows than columns to fit, got n={n}, p={p}")
    if dm.weights is None:
        w = np.ones(n)
        weighted = False
    else:
        w = check_weights(dm.weights, n)
        weighted = True
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw

    q, r = np.linalg.qr(Xw)
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOL * max(diag.max(), 1e-300):
        require_full_rank(Xw, dm.column_names, context="design matrix")  # names the dependent set
        raise NumericalError("design matrix is numerically rank deficient")

    beta = scipy.linalg.solve_triangular(r, q.T @ yw)
    fitted = X @ beta
    residuals = y - fitted
    hat = np.einsum("ij,ij->i", q, q)
    sigma2 = float(w @ (residuals**2) / (n - p))
    r_inv = scipy.linalg.solve_triangular(r, np.eye(p))
    cov_classical = sigma2 * (r_inv @ r_inv.T)

    result = FitResult(
        coefficients=beta,
        cov_classical=cov_classical,
        cov_robust=np.empty((0, 0)),
        robust_variant="HC1",
        residuals=residuals,
        fitted=fitted,
        hat_diag=hat,
        sigma2=sigma2,
        n=n,
        p=p,
        weighted=weighted,
        design=dm,
        r_inverse=r_inv,
    )
    object.__setattr__(result, "cov_robust", robust_covariance(result, "HC1"))
    return result


def robust_covariance(fr: FitResult, variant: str = "HC1") -> np.ndarray:
    """Sandwich covariance (X'WX)^-1 X'W Omega W X (X'WX)^-1.

    Omega per variant: HC0 r_i^2; HC1 r_i^2 * n/(n-p); HC2 r_i^2/(1-h_i);
    HC3 r_i^2/(1-h_i)^2, with h the weighted-projection leverage. The result
    is symmetrized; HC1 equals HC0 * n/(n-p) elementwise by construction.
    """
    if variant not in HC_VARIANTS:
        raise ConfigError(f"unknown robust variant {variant!r}; expected one of {HC_VARIANTS}")
    if variant == "HC1":
        # Scale the HC0 matrix itself so the elementwise ratio is exact.
        return robust_covariance(fr, "HC0") * (fr.n / (fr.n - fr.p))
    w = fr.weight_vector()
    u2 = w * fr.residuals**2  # (sqrt(w) r)^2
    if variant in ("HC2", "HC3"):
        close = np.nonzero(fr.hat_diag >= 1.0 - 1e-12)[0]
        if close.size:
            rows = ", ".join(fr.design.row_ids[i] for i in close[:5])
            raise NumericalError(f"leverage numerically 1 under {variant} for row(s): {rows}")
        if variant == "HC2":
            u2 = u2 / (1.0 - fr.hat_diag)
        else:
            u2 = u2 / (1.0 - fr.hat_diag) ** 2

    Xw = fr.design.X * np.sqrt(w)[:, None]
    meat = (Xw * u2[:, None]).T @ Xw
    bread = fr.r_inverse @ fr.r_inverse.T
    cov = bread @ meat @ bread
    return (cov + cov.T) / 2.0


@dataclass(frozen=True)
class CoefficientRow:
    term: str
    label: str
    estimate: float
    se: float
    t_stat: float
    p_value: float
    ci_low: float
    ci_high: float
    significance: str
    degenerate: bool = False


@dataclass(frozen=True)
class CoefficientTable:
    """Per-coefficient robust inference, ordered as the design columns."""

    rows: tuple[CoefficientRow, ...]
    variant: str
    references: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.rows)

    def by_term(self) -> dict[str, CoefficientRow]:
        return {row.term: row for row in self.rows}

    def to_records(self) -> list[dict]:
        return [
            {
                "term": r.term,
                "label": r.label,
                "estimate": r.estimate,
                "se": r.se,
                "t_stat": r.t_stat,
                "p_value": r.p_value,
                "ci_low": r.ci_low,
                "ci_high": r.ci_high,
                "significance": r.significance,
                "degenerate": r.degenerate,
            }
            for r in self.rows
        ]

    def to_json(self) -> str:
        return json.dumps(
            {"variant": self.variant, "references": self.references, "coefficients": self.to_records()},
            sort_keys=True,
        )

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fields = ["term", "label", "estimate", "se", "t_stat", "p_value", "ci_low", "ci_high", "significance", "degenerate"]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for rec in self.to_records():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})

    def forest_data(self) -> list[dict]:
        """Rows for forest-style plotting: term, estimate, CI bounds, marker."""
        return [
            {
                "term": r.term,
                "label": r.label,
                "estimate": r.estimate,
                "ci_low": r.ci_low,
                "ci_high": r.ci_high,
                "significance": r.significance,
            }
            for r in self.rows
        ]


def _significance_marker(p: float) -> str:
    for level, marker in SIGNIFICANCE_LEVELS:
        if p < level:
            return marker
    return ""


def coefficient_table(fr: FitResult, variant: str = "HC1") -> CoefficientTable:
    """Robust-SE inference table with 0.05/0.01/0.001 significance markers.

    Degenerate inference (SE = 0, e.g. a perfect fit) is flagged per row
    instead of emitting NaN: t is +/-inf (0 for a zero estimate) and the
    p-value is 0 (1 for a zero estimate).
    """
    cov = robust_covariance(fr, variant)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    # A perfect fit leaves only rounding noise in the residuals; treat the
    # whole table as degenerate instead of reporting astronomically large t.
    perfect = fr.perfect_fit
    coef_scale = float(np.max(np.abs(fr.coefficients), initial=0.0))
    rows = []
    for j, term in enumerate(fr.column_names):
        est = float(fr.coefficients[j])
        s = 0.0 if perfect else float(se[j])
        if s == 0.0:
            degenerate = True
            est_is_zero = abs(est) <= 1e-12 * max(coef_scale, 1e-300)
            t = 0.0 if est_is_zero else math.copysign(math.inf, est)
            p = 1.0 if est_is_zero else 0.0
        else:
            degenerate = False
            t = est / s
            p = 2.0 * float(norm.sf(abs(t)))
        rows.append(
            CoefficientRow(
                term=term,
                label=fr.design.column_labels.get(term, term),
                estimate=est,
                se=s,
                t_stat=t,
                p_value=p,
                ci_low=est - CI_MULTIPLIER * s,
                ci_high=est + CI_MULTIPLIER * s,
                significance=_significance_marker(p),
                degenerate=degenerate,
            )
        )
    return CoefficientTable(rows=tuple(rows), variant=variant, references=dict(fr.design.references))


class RobustLinearRegression(BaseEstimator, RegressorMixin):
    """sklearn-style regressor: WLS fit with sandwich standard errors.

    Parameters: fit_intercept prepends a constant column; robust_variant picks
    the HC flavor. After fit: coef_, intercept_, robust_se_, result_ (the full
    FitResult). sample_weight acts as a precision weight.
    """

    def __init__(self, fit_intercept: bool = True, robust_variant: str = "HC1"):
        self.fit_intercept = fit_intercept
        self.robust_variant = robust_variant

    def fit(self, X, y, sample_weight=None):
        X = check_matrix(X, "X")
        y = np.asarray(y, dtype=float)
        if y.shape[0] != X.shape[0]:
            raise DataError(f"y has length {y.shape[0]}, X has {X.shape[0]} rows")
        names = tuple(f"x{j}" for j in range(X.shape[1]))
        if self.fit_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
            names = ("intercept",) + names
        dm = DesignMatrix(
            y=y,
            X=X,
            column_names=names,
            row_ids=tuple(str(i) for i in range(X.shape[0])),
            weights=None if sample_weight is None else np.asarray(sample_weight, dtype=float),
        )
        result = fit_wls(dm)
        cov = robust_covariance(result, self.robust_variant)
        offset = 1 if self.fit_intercept else 0
        self.result_ = result
        self.coef_ = result.coefficients[offset:]
        self.intercept_ = float(result.coefficients[0]) if self.fit_intercept else 0.0
        self.robust_se_ = np.sqrt(np.maximum(np.diag(cov), 0.0))[offset:]
        return self

    def predict(self, X):
        X = check_matrix(X, "X")
        return self.intercept_ + X @ self.coef_

    def summary(self) -> CoefficientTable:
        return coefficient_table(self.result_, self.robust_variant)
