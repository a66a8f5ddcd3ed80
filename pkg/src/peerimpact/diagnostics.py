"""Post-fit diagnostics: VIF, influence measures (Cook's distance, hat
values) with threshold exclusion, and the Breusch-Pagan heteroscedasticity
test (studentized/Koenker by default).

Weighted fits are diagnosed on the weighted projection, i.e. the hat matrix
of sqrt(W)X; with unit weights everything reduces to the textbook formulas.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from .errors import ConfigError, DataError, NumericalError
from .records import RecordSet, subset_by_ids
from .regress import FitResult

# Absolute influence thresholds used throughout as defaults; the common 4/n
# rule is available by passing explicit thresholds instead.
DEFAULT_COOK_THRESHOLD = 0.02
DEFAULT_HAT_THRESHOLD = 0.01


@dataclass(frozen=True)
class DiagnosticsReport:
    vif: dict[str, float]
    cooks_d: np.ndarray
    hat: np.ndarray
    bp_stat: float
    bp_pvalue: float
    flagged_rows: tuple[tuple[str, str], ...]
    thresholds: tuple[float, float]

    def to_json(self) -> str:
        payload = {
            "vif": {k: float(v) for k, v in self.vif.items()},
            "cooks_d": [float(v) for v in self.cooks_d],
            "hat": [float(v) for v in self.hat],
            "bp_stat": float(self.bp_stat),
            "bp_pvalue": float(self.bp_pvalue),
            "flagged_rows": [[rid, reason] for rid, reason in self.flagged_rows],
            "thresholds": {"cook": self.thresholds[0], "hat": self.thresholds[1]},
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        payload = json.loads(text)
        return cls(
            vif={str(k): float(v) for k, v in payload["vif"].items()},
            cooks_d=np.array(payload["cooks_d"], dtype=float),
            hat=np.array(payload["hat"], dtype=float),
            bp_stat=float(payload["bp_stat"]),
            bp_pvalue=float(payload["bp_pvalue"]),
            flagged_rows=tuple((str(r), str(why)) for r, why in payload["flagged_rows"]),
            thresholds=(float(payload["thresholds"]["cook"]), float(payload["thresholds"]["hat"])),
        )


def vif(dm) -> dict[str, float]:
    """Variance inflation factor per non-intercept predictor.

    Uses the Gram-inverse identity VIF_j = [(X'X)^-1]_jj * sum_i w_i
    (x_ij - xbar_j)^2, which equals 1/(1 - R^2_j) from the auxiliary
    regression of column j on all others (intercept included). Perfectly
    collinear columns report inf rather than raising.
    """
    X = np.asarray(dm.X, dtype=float)
    names = dm.column_names
    w = dm.weights if dm.weights is not None else np.ones(X.shape[0])
    Xw = X * np.sqrt(w)[:, None]
    gram = Xw.T @ Xw
    try:
        ginv = np.linalg.inv(gram)
        singular = False
    except np.linalg.LinAlgError:
        ginv = np.linalg.pinv(gram)
        singular = True

    wmean = (w @ X) / w.sum()
    sst = ((X - wmean) ** 2 * w[:, None]).sum(axis=0)
    out: dict[str, float] = {}
    for j, name in enumerate(names):
        if name == "intercept":
            continue
        if singular:
            # Fall back to an explicit auxiliary regression per column.
            others = np.delete(Xw, j, axis=1)
            beta, *_ = np.linalg.lstsq(others, Xw[:, j], rcond=None)
            rss = float(((Xw[:, j] - others @ beta) ** 2).sum())
            out[name] = float("inf") if rss <= 1e-12 * max(sst[j], 1.0) else float(sst[j] / rss)
        else:
            value = float(ginv[j, j] * sst[j])
            out[name] = value if np.isfinite(value) else float("inf")
    return out


def influence(fr: FitResult) -> tuple[np.ndarray, np.ndarray]:
    """(cooks_d, hat) aligned to the fit's row_ids.

    Cook's D_i = w_i r_i^2 h_i / (p s^2 (1-h_i)^2) with the weighted leverage
    h; rows with h numerically 1 get an inf sentinel instead of raising.
    """
    h = fr.hat_diag
    w = fr.weight_vector()
    denom_ok = h < 1.0 - 1e-12
    d = np.full(fr.n, np.inf)
    if fr.perfect_fit:
        # Perfect fit: nothing moves the coefficients.
        d = np.zeros(fr.n)
        d[~denom_ok] = np.inf
        return d, h
    np.divide(
        w * fr.residuals**2 * h,
        fr.p * fr.sigma2 * (1.0 - h) ** 2,
        out=d,
        where=denom_ok,
    )
    return d, h


def exclude_influential(
    rs: RecordSet,
    fr: FitResult,
    cook_thresh: float = DEFAULT_COOK_THRESHOLD,
    hat_thresh: float = DEFAULT_HAT_THRESHOLD,
) -> tuple[RecordSet, list[tuple[str, str]]]:
    """Drop rows exceeding either influence threshold.

    Returns (kept, flagged) where flagged lists (pub_id, reason) with reason
    "cook", "hat", or "both". Raises if the exclusion would empty the set.
    """
    if cook_thresh <= 0 or hat_thresh <= 0:
        raise ConfigError("influence thresholds must be positive")
    cooks_d, hat = influence(fr)
    flagged: list[tuple[str, str]] = []
    for rid, d, h in zip(fr.design.row_ids, cooks_d, hat):
        over_cook = d > cook_thresh
        over_hat = h > hat_thresh
        if over_cook and over_hat:
            flagged.append((rid, "both"))
        elif over_cook:
            flagged.append((rid, "cook"))
        elif over_hat:
            flagged.append((rid, "hat"))
    if len(flagged) == len(fr.design.row_ids):
        raise DataError("influence exclusion would remove every row; model would be unfittable")
    note = (
        f"exclude_influential: cook>{cook_thresh} or hat>{hat_thresh}: "
        f"{len(flagged)} of {len(fr.design.row_ids)} rows flagged"
    )
    kept = subset_by_ids(rs, [rid for rid, _ in flagged], note)
    return kept, flagged


def breusch_pagan(fr: FitResult, studentized: bool = True) -> tuple[float, float]:
    """Heteroscedasticity test via the auxiliary regression of squared
    (weighted) residuals on the design.

    studentized=True gives the Koenker form, stat = n * R^2_aux, chi-square
    with p-1 degrees of freedom; False gives the classical LM form, half the
    explained sum of squares of the variance-normalized squared residuals.
    Constant residuals (e.g. a perfect fit) yield (0.0, 1.0).
    """
    X = fr.design.X
    w = fr.weight_vector()
    u2 = w * fr.residuals**2
    n, p = fr.n, fr.p
    df = p - 1
    if df < 1 or fr.perfect_fit:
        return 0.0, 1.0

    center = u2 - u2.mean()
    sst = float(center @ center)
    if sst <= 1e-300:
        return 0.0, 1.0

    beta, *_ = np.linalg.lstsq(X, u2, rcond=None)
    fitted = X @ beta
    ess = float(((fitted - u2.mean()) ** 2).sum())
    if studentized:
        stat = n * ess / sst
    else:
        sigma_bar = u2.mean()
        g = u2 / sigma_bar
        beta_g, *_ = np.linalg.lstsq(X, g, rcond=None)
        fitted_g = X @ beta_g
        stat = float(((fitted_g - g.mean()) ** 2).sum()) / 2.0
    pvalue = float(chi2.sf(stat, df))
    return float(stat), pvalue


def run_diagnostics(
    fr: FitResult,
    cook_thresh: float = DEFAULT_COOK_THRESHOLD,
    hat_thresh: float = DEFAULT_HAT_THRESHOLD,
    studentized: bool = True,
) -> DiagnosticsReport:
    """Assemble the full diagnostic battery for one fit."""
    cooks_d, hat = influence(fr)
    flagged = []
    for rid, d, h in zip(fr.design.row_ids, cooks_d, hat):
        over_cook = d > cook_thresh
        over_hat = h > hat_thresh
        if over_cook or over_hat:
            flagged.append((rid, "both" if (over_cook and over_hat) else ("cook" if over_cook else "hat")))
    bp_stat, bp_pvalue = breusch_pagan(fr, studentized=studentized)
    return DiagnosticsReport(
        vif=vif(fr.design),
        cooks_d=cooks_d,
        hat=hat,
        bp_stat=bp_stat,
        bp_pvalue=bp_pvalue,
        flagged_rows=tuple(flagged),
        thresholds=(cook_thresh, hat_thresh),
    )


def influence_plot_data(fr: FitResult) -> list[dict]:
    """Rows for residual-vs-fitted, scale-location and influence scatter
    exports: one dict per observation."""
    cooks_d, hat = influence(fr)
    w = fr.weight_vector()
    scale = np.sqrt(fr.sigma2) if fr.sigma2 > 0 else 0.0
    rows = []
    for i, rid in enumerate(fr.design.row_ids):
        h = float(hat[i])
        if scale > 0 and h < 1.0 - 1e-12:
            std_resid = float(np.sqrt(w[i]) * fr.residuals[i] / (scale * np.sqrt(1.0 - h)))
        else:
            std_resid = 0.0
        rows.append(
            {
                "pub_id": rid,
                "fitted": float(fr.fitted[i]),
                "residual": float(fr.residuals[i]),
                "std_residual": std_resid,
                "sqrt_abs_std_residual": float(np.sqrt(abs(std_resid))),
                "hat": h,
                "cooks_d": float(cooks_d[i]),
            }
        )
    return rows


def write_plot_data(fr: FitResult, out_dir: str | Path) -> list[Path]:
    """Write the three diagnostic plot data files; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = influence_plot_data(fr)
    spec = {
        "residual_vs_fitted.csv": ("pub_id", "fitted", "residual"),
        "scale_location.csv": ("pub_id", "fitted", "sqrt_abs_std_residual"),
        "influence_scatter.csv": ("pub_id", "hat", "std_residual", "cooks_d"),
    }
    paths = []
    for fname, cols in spec.items():
        path = out_dir / fname
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in rows:
                writer.writerow([row[c] if c == "pub_id" else repr(float(row[c])) for c in cols])
        paths.append(path)
    return paths
