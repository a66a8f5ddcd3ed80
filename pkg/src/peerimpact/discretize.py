"""Optimal 1-D discretization into k contiguous classes (Fisher breaks).

The partition minimizes the (weighted) within-class sum of squared deviations,
found exactly by dynamic programming over the sorted distinct values. Class
intervals are reported as observed-data bounds.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError
from .validation import as_float_vector, check_weights


@dataclass(frozen=True)
class BreakSet:
    """k ordered class intervals [lo_i, hi_i] over observed values, plus the
    total within-class sum of squared deviations they achieve."""

    k: int
    boundaries: tuple[tuple[float, float], ...]
    cost: float
    counts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.k < 1 or len(self.boundaries) != self.k:
            raise DataError(f"BreakSet needs k>=1 intervals, got k={self.k}, {len(self.boundaries)} intervals")
        for lo, hi in self.boundaries:
            if lo > hi:
                raise DataError(f"interval [{lo},{hi}] is inverted")
        for (_, hi), (lo, _) in zip(self.boundaries, self.boundaries[1:]):
            if hi >= lo:
                raise DataError("class intervals must be disjoint and increasing")
        if self.cost < 0:
            raise DataError(f"cost must be >= 0, got {self.cost}")

    def lower_bounds(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.boundaries])

    def labels(self) -> tuple[str, ...]:
        def fmt(x: float) -> str:
            return str(int(x)) if float(x).is_integer() else repr(float(x))

        return tuple(f"[{fmt(lo)},{fmt(hi)}]" for lo, hi in self.boundaries)

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "boundaries": [[lo, hi] for lo, hi in self.boundaries],
            "cost": self.cost,
            "counts": list(self.counts),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BreakSet":
        payload = json.loads(text)
        return cls(
            k=int(payload["k"]),
            boundaries=tuple((float(lo), float(hi)) for lo, hi in payload["boundaries"]),
            cost=float(payload["cost"]),
            counts=tuple(int(c) for c in payload.get("counts", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BreakSet":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _compress(values: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct values with summed weights. Ties never split across
    classes: for any tie split there is an equal-or-better partition keeping
    the run whole, so compression preserves the optimum."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    distinct, start = np.unique(v, return_index=True)
    summed = np.add.reduceat(w, start)
    return distinct, summed


def fisher_breaks(values, k: int, weights=None) -> BreakSet:
    """Optimal k-class contiguous partition of 1-D data.

    Parameters
    ----------
    values : array-like of reals, at least k distinct values.
    k : number of classes, >= 1.
    weights : optional positive per-value weights (e.g. calibration weights);
        default unweighted.

    Returns a BreakSet whose boundaries are observed data values and whose
    cost is the minimal total within-class sum of squared deviations. Ties
    between equal-cost partitions resolve toward the earliest feasible cut,
    so the result is deterministic.
    """
    vals = as_float_vector(values, "values")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    w = np.ones_like(vals) if weights is None else check_weights(weights, vals.shape[0])
    v, vw = _compress(vals, w)
    m = v.shape[0]
    if k > m:
        raise DataError(f"k={k} exceeds the {m} distinct values available")

    # Center by the weighted mean before forming prefix sums: within-class SSD
    # is shift-invariant and centering avoids catastrophic cancellation in the
    # sum-of-squares prefix formula.
    mean = float(np.average(v, weights=vw))
    c = v - mean
    W = np.concatenate(([0.0], np.cumsum(vw)))
    S1 = np.concatenate(([0.0], np.cumsum(vw * c)))
    S2 = np.concatenate(([0.0], np.cumsum(vw * c * c)))

    def seg_cost(starts: np.ndarray, end: int) -> np.ndarray:
        # Within-class SSD for classes [start..end] inclusive, vectorized over starts.
        ww = W[end + 1] - W[starts]
        s1 = S1[end + 1] - S1[starts]
        s2 = S2[end + 1] - S2[starts]
        return np.maximum(s2 - s1 * s1 / ww, 0.0)

    best = np.empty((k, m))
    best[0, :] = np.maximum(S2[1:] - S1[1:] * S1[1:] / W[1:], 0.0)
    cut = np.zeros((k, m), dtype=np.int64)
    for j in range(1, k):
        best[j, : j] = np.inf
        for i in range(j, m):
            starts = np.arange(j, i + 1)
            cand = best[j - 1, j - 1 : i] + seg_cost(starts, i)
            t = int(np.argmin(cand))  # first minimum -> earliest cut
            best[j, i] = cand[t]
            cut[j, i] = j + t

    # Backtrack class start indices.
    bounds: list[tuple[float, float]] = []
    counts: list[int] = []
    end = m - 1
    raw_counts = np.zeros(m, dtype=np.int64)
    np.add.at(raw_counts, np.searchsorted(v, vals), 1)
    for j in range(k - 1, 0, -1):
        start = int(cut[j, end])
        bounds.append((float(v[start]), float(v[end])))
        counts.append(int(raw_counts[start : end + 1].sum()))
        end = start - 1
    bounds.append((float(v[0]), float(v[end])))
    counts.append(int(raw_counts[: end + 1].sum()))
    bounds.reverse()
    counts.reverse()

    return BreakSet(k=k, boundaries=tuple(bounds), cost=float(best[k - 1, m - 1]), counts=tuple(counts))


def assign_class(value: float, breaks: BreakSet) -> int:
    """Class index in 1..k for a value under a fitted BreakSet.

    Values falling in the gap between hi_i and lo_{i+1} (possible for unseen
    data) map to the lower class i; values below the first lower bound map to
    class 1 and above the last upper bound to class k, with a warning.
    """
    return int(assign_classes(np.array([float(value)]), breaks)[0])


def assign_classes(values, breaks: BreakSet) -> np.ndarray:
    """Vectorized assign_class; returns 1-based int64 class indices."""
    vals = as_float_vector(values, "values")
    los = breaks.lower_bounds()
    lo_min = breaks.boundaries[0][0]
    hi_max = breaks.boundaries[-1][1]
    n_out = int(np.sum((vals < lo_min) | (vals > hi_max)))
    if n_out:
        warnings.warn(
            f"{n_out} value(s) outside the fitted range [{lo_min},{hi_max}] "
            "clamped to the extreme classes",
            stacklevel=2,
        )
    idx = np.searchsorted(los, vals, side="right") - 1
    return np.clip(idx, 0, breaks.k - 1).astype(np.int64) + 1


class FisherBreaksDiscretizer(BaseEstimator, TransformerMixin):
    """Transformer wrapper: fit learns the optimal BreakSet, transform maps
    values to 1-based class indices. Composes with sklearn pipelines.

    Attributes after fit: breaks_ (BreakSet).
    """

    def __init__(self, n_classes: int = 5):
        self.n_classes = n_classes

    def fit(self, X, y=None, sample_weight=None):
        self.breaks_ = fisher_breaks(X, self.n_classes, weights=sample_weight)
        return self

    def transform(self, X):
        if not hasattr(self, "breaks_"):
            raise DataError("FisherBreaksDiscretizer must be fitted before transform")
        return assign_classes(X, self.breaks_).reshape(-1, 1)
