"""Seeded synthetic-corpus generator with planted regression effects.

Ships reference marginal structures (report-length histogram, reports-per-
publication multiplicities, and categorical margins for a review-report
sample and its parent bibliographic population) so pipeline stages can be
exercised against known ground truth. Citations are drawn from the inverse of
the analysis model: log1p(citations) = x.beta + Normal(0, noise_sd) noise,
rounded and floored at zero.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .design import ModelSpec, build_design
from .discretize import fisher_breaks
from .errors import ConfigError
from .raking import CalibrationSpec, MarginTarget
from .records import PublicationRecord, RecordSet

# Report-length histogram: (lower bound, upper bound, count). The last bin's
# upper bound is inclusive.
LENGTH_BIN_COUNTS = (
    (0, 200, 21007),
    (200, 400, 13946),
    (400, 600, 9052),
    (600, 800, 5252),
    (800, 1000, 3114),
    (1000, 1200, 2001),
    (1200, 1400, 1111),
    (1400, 1600, 706),
    (1600, 1800, 418),
    (1800, 2000, 303),
    (2000, 2200, 220),
    (2200, 2400, 147),
    (2400, 2600, 104),
    (2600, 2883, 101),
)

# Reports-per-publication multiplicities (publication counts).
REPORT_MULTIPLICITY_COUNTS = {1: 57256, 2: 3691, 3: 233, 4: 16, 5: 1}

# Categorical margins of the reference review-report sample (counts) and of
# the parent population it is calibrated against.
SAMPLE_MARGIN_COUNTS = {
    "pub_year": {
        "2009": 761, "2010": 946, "2011": 1356, "2012": 1762, "2013": 2601,
        "2014": 3521, "2015": 4742, "2016": 5917, "2017": 14336, "2018": 18699,
        "2019": 3046, "2020": 401, "2021": 5,
    },
    "open_access": {"yes": 25177, "no": 32916},
    "funding_band": {"0": 15284, "1": 13809, "2": 10758, "3": 7155, "4+": 11087},
    "country_band": {"1": 41008, "2": 12778, "3": 3336, "4+": 971},
}
POPULATION_MARGIN_COUNTS = {
    "pub_year": {
        "2009": 552615, "2010": 546703, "2011": 717698, "2012": 839311,
        "2013": 1002514, "2014": 1141004, "2015": 1249900, "2016": 1348223,
        "2017": 1591868, "2018": 1679518, "2019": 1140289, "2020": 516787,
        "2021": 282,
    },
    "open_access": {"yes": 3532995, "no": 8793717},
    "funding_band": {"0": 5681665, "1": 2613911, "2": 1762755, "3": 921952, "4+": 1346429},
    "country_band": {"1": 10640214, "2": 1485416, "3": 167730, "4+": 33352},
}

# Default 14-label discipline vocabulary with panel-membership-derived shares.
DISCIPLINE_SHARES = {
    "LS7": 29.90, "LS4": 16.67, "LS9": 13.88, "LS8": 13.86, "PE10": 12.55,
    "PE4": 11.64, "LS1": 10.77, "LS2": 10.42, "PE5": 10.19, "PE2": 9.38,
    "PE11": 9.10, "LS5": 7.49, "LS6": 6.55, "PE3": 5.89,
}

IMPACT_BAND_RANGES = {
    "<0.8": (0.0, 0.8),
    "[0.8,1.2)": (0.8, 1.2),
    "[1.2,1.8)": (1.2, 1.8),
    "[1.8,2.2)": (1.8, 2.2),
    ">=2.2": (2.2, 6.0),
}

_BAND_VALUES = {"0": 0, "1": 1, "2": 2, "3": 3, "4+": 4}


def _normalize(counts: Mapping) -> dict:
    total = float(sum(counts.values()))
    return {key: value / total for key, value in counts.items()}


def default_margin_shares() -> dict[str, dict[str, float]]:
    shares = {var: _normalize(cat) for var, cat in SAMPLE_MARGIN_COUNTS.items()}
    shares["discipline"] = _normalize(DISCIPLINE_SHARES)
    return shares


def default_length_histogram() -> tuple[tuple[float, float, float], ...]:
    total = float(sum(c for _, _, c in LENGTH_BIN_COUNTS))
    return tuple((float(lo), float(hi), c / total) for lo, hi, c in LENGTH_BIN_COUNTS)


def default_report_multiplicity() -> dict[int, float]:
    return _normalize(REPORT_MULTIPLICITY_COUNTS)


def _margins_from_counts(
    counts: Mapping[str, Mapping[str, float]],
    year_range: tuple[int, int] | None,
) -> tuple[MarginTarget, ...]:
    shares = {var: _normalize(cat) for var, cat in counts.items()}
    year_shares = shares["pub_year"]
    if year_range is not None:
        lo, hi = year_range
        year_shares = _normalize({y: c for y, c in counts["pub_year"].items() if lo <= int(y) <= hi})
    margins = [
        MarginTarget("pub_year", year_shares),
        MarginTarget("open_access", shares["open_access"]),
    ]
    for band, share in shares["funding_band"].items():
        margins.append(MarginTarget(f"funding:{band}", {"yes": share, "no": 1.0 - share}))
    margins.append(MarginTarget("country_band", shares["country_band"]))
    return tuple(margins)


def population_calibration_spec(
    tol: float = 1e-8, max_iter: int = 1000, year_range: tuple[int, int] | None = None
) -> CalibrationSpec:
    """Margins targeting the reference population: publication year, open
    access, one binary margin per funding band, and country-count bands.
    `year_range` restricts and renormalizes the year margin so the spec can
    follow a year filter."""
    return CalibrationSpec(
        margins=_margins_from_counts(POPULATION_MARGIN_COUNTS, year_range), tol=tol, max_iter=max_iter
    )


def sample_calibration_spec(
    tol: float = 1e-8, max_iter: int = 1000, year_range: tuple[int, int] | None = None
) -> CalibrationSpec:
    """Same margin layout as population_calibration_spec but targeting the
    reference sample's own shares."""
    return CalibrationSpec(
        margins=_margins_from_counts(SAMPLE_MARGIN_COUNTS, year_range), tol=tol, max_iter=max_iter
    )


@dataclass(frozen=True)
class SynthSpec:
    """Generator configuration. Defaults reproduce the bundled reference
    marginal structures; beta plants true coefficients on design columns
    ("intercept", "length_class_2".."length_class_k", "journal_impact",
    "open_access_yes", "log1p_funders", "log_countries", "discipline:<label>",
    "year:<year>")."""

    n: int
    seed: int = 0
    length_histogram: tuple[tuple[float, float, float], ...] | None = None
    margin_shares: Mapping[str, Mapping[str, float]] | None = None
    report_multiplicity: Mapping[int, float] | None = None
    beta: Mapping[str, float] | None = None
    noise_sd: float = 1.0
    k: int = 5
    multi_discipline_rate: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.noise_sd < 0:
            raise ConfigError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.length_histogram is None:
            object.__setattr__(self, "length_histogram", default_length_histogram())
        else:
            object.__setattr__(
                self, "length_histogram", tuple((float(a), float(b), float(s)) for a, b, s in self.length_histogram)
            )
        if self.margin_shares is None:
            object.__setattr__(self, "margin_shares", default_margin_shares())
        else:
            object.__setattr__(self, "margin_shares", {k: dict(v) for k, v in self.margin_shares.items()})
        if self.report_multiplicity is None:
            object.__setattr__(self, "report_multiplicity", default_report_multiplicity())
        else:
            object.__setattr__(self, "report_multiplicity", {int(k): float(v) for k, v in self.report_multiplicity.items()})
        object.__setattr__(self, "beta", dict(self.beta) if self.beta is not None else {"intercept": 1.5})

        hist_total = sum(s for _, _, s in self.length_histogram)
        if abs(hist_total - 1.0) > 1e-9:
            raise ConfigError(f"length_histogram shares sum to {hist_total}, expected 1")
        mult_total = sum(self.report_multiplicity.values())
        if abs(mult_total - 1.0) > 1e-9:
            raise ConfigError(f"report_multiplicity shares sum to {mult_total}, expected 1")
        for var, shares in self.margin_shares.items():
            total = sum(shares.values())
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"margin_shares[{var!r}] sums to {total}, expected 1")

    def to_json(self) -> str:
        payload = {
            "n": self.n,
            "seed": self.seed,
            "length_histogram": [list(b) for b in self.length_histogram],
            "margin_shares": {k: dict(v) for k, v in self.margin_shares.items()},
            "report_multiplicity": {str(k): v for k, v in self.report_multiplicity.items()},
            "beta": dict(self.beta),
            "noise_sd": self.noise_sd,
            "k": self.k,
            "multi_discipline_rate": self.multi_discipline_rate,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        payload = json.loads(text)
        kwargs = {"n": int(payload["n"]), "seed": int(payload.get("seed", 0))}
        if "length_histogram" in payload:
            kwargs["length_histogram"] = tuple(tuple(b) for b in payload["length_histogram"])
        if "margin_shares" in payload:
            kwargs["margin_shares"] = payload["margin_shares"]
        if "report_multiplicity" in payload:
            kwargs["report_multiplicity"] = {int(k): float(v) for k, v in payload["report_multiplicity"].items()}
        if "beta" in payload:
            kwargs["beta"] = {str(k): float(v) for k, v in payload["beta"].items()}
        for key in ("noise_sd", "multi_discipline_rate"):
            if key in payload:
                kwargs[key] = float(payload[key])
        if "k" in payload:
            kwargs["k"] = int(payload["k"])
        return cls(**kwargs)


_KNOWN_MARGIN_VARS = ("pub_year", "open_access", "funding_band", "country_band", "discipline", "impact_class")


def _sample_categorical(rng, shares: Mapping[str, float], size: int) -> np.ndarray:
    cats = list(shares.keys())
    probs = np.array([shares[c] for c in cats], dtype=float)
    probs = probs / probs.sum()
    idx = rng.choice(len(cats), size=size, p=probs)
    return np.array(cats, dtype=object)[idx]


def _materialize(spec: SynthSpec):
    unknown = set(spec.margin_shares) - set(_KNOWN_MARGIN_VARS)
    if unknown:
        raise ConfigError(f"margin_shares for unknown variable(s): {sorted(unknown)}")
    rng = np.random.default_rng(spec.seed)

    # Publications and their report multiplicities; truncate the last one so
    # exactly n report records come out.
    mult_vals = sorted(spec.report_multiplicity)
    mult_probs = np.array([spec.report_multiplicity[v] for v in mult_vals], dtype=float)
    mult_probs = mult_probs / mult_probs.sum()
    draws = rng.choice(mult_vals, size=spec.n, p=mult_probs)
    cum = np.cumsum(draws)
    n_pub = int(np.searchsorted(cum, spec.n, side="left")) + 1
    mult = draws[:n_pub].copy()
    mult[-1] -= int(cum[n_pub - 1] - spec.n)

    shares = spec.margin_shares
    years = _sample_categorical(rng, shares["pub_year"], n_pub).astype(int) if "pub_year" in shares else np.full(n_pub, 2015)
    oa = (
        _sample_categorical(rng, shares["open_access"], n_pub) == "yes"
        if "open_access" in shares
        else rng.random(n_pub) < 0.4
    )
    if "funding_band" in shares:
        n_funders = np.array([_BAND_VALUES[b] for b in _sample_categorical(rng, shares["funding_band"], n_pub)])
    else:
        n_funders = rng.integers(0, 4, size=n_pub)
    if "country_band" in shares:
        n_countries = np.array([_BAND_VALUES[b] for b in _sample_categorical(rng, shares["country_band"], n_pub)])
    else:
        n_countries = rng.integers(1, 4, size=n_pub)
    disc_shares = shares.get("discipline", _normalize(DISCIPLINE_SHARES))
    primary = _sample_categorical(rng, disc_shares, n_pub)
    disciplines = [frozenset([p]) for p in primary]
    if spec.multi_discipline_rate > 0:
        extra_mask = rng.random(n_pub) < spec.multi_discipline_rate
        second = _sample_categorical(rng, disc_shares, n_pub)
        disciplines = [
            frozenset([p, s]) if (m and s != p) else d
            for p, s, m, d in zip(primary, second, extra_mask, disciplines)
        ]
    if "impact_class" in shares:
        bands = _sample_categorical(rng, shares["impact_class"], n_pub)
        lo = np.array([IMPACT_BAND_RANGES[b][0] for b in bands])
        hi = np.array([IMPACT_BAND_RANGES[b][1] for b in bands])
        jif = lo + rng.random(n_pub) * (hi - lo)
    else:
        jif = rng.lognormal(mean=0.3, sigma=0.6, size=n_pub)

    # Report rows: publication attributes repeat per report; each report draws
    # its own length from the histogram (uniform integers within the bin).
    pub_index = np.repeat(np.arange(n_pub), mult)
    n_rec = pub_index.shape[0]
    hist = spec.length_histogram
    bin_probs = np.array([s for _, _, s in hist], dtype=float)
    bin_probs = bin_probs / bin_probs.sum()
    bin_idx = rng.choice(len(hist), size=n_rec, p=bin_probs)
    lows = np.array([lo for lo, _, _ in hist])[bin_idx]
    highs = np.array([hi for _, hi, _ in hist])[bin_idx]
    last = bin_idx == len(hist) - 1  # inclusive upper bound on the last bin
    lo_int = lows.astype(int)
    hi_int = np.maximum(highs.astype(int) + last.astype(int), lo_int + 1)
    lengths = rng.integers(lo_int, hi_int)

    width = max(6, len(str(n_pub)))
    pub_ids = np.array([f"P{i + 1:0{width}d}" for i in range(n_pub)], dtype=object)
    provisional = tuple(
        PublicationRecord(
            pub_id=str(pub_ids[p]),
            report_length=int(lengths[i]),
            citations=0,
            pub_year=int(years[p]),
            open_access=bool(oa[p]),
            n_funders=int(n_funders[p]),
            n_countries=int(n_countries[p]),
            disciplines=disciplines[p],
            journal_impact=float(jif[p]),
        )
        for i, p in enumerate(pub_index)
    )

    breaks = fisher_breaks(lengths.astype(float), spec.k)
    model = ModelSpec(length_breaks=breaks)
    dm = build_design(RecordSet(records=provisional), model, validate=False)
    beta_vec = np.zeros(dm.p)
    unknown_beta = set(spec.beta) - set(dm.column_names)
    if unknown_beta:
        raise ConfigError(f"beta names not among induced design columns: {sorted(unknown_beta)}")
    for j, name in enumerate(dm.column_names):
        beta_vec[j] = spec.beta.get(name, 0.0)
    eta = dm.X @ beta_vec
    noise = rng.normal(0.0, spec.noise_sd, size=n_rec) if spec.noise_sd > 0 else np.zeros(n_rec)
    citations = np.maximum(np.rint(np.expm1(eta + noise)), 0.0).astype(np.int64)

    records = tuple(
        dataclasses.replace(r, citations=int(c)) for r, c in zip(provisional, citations)
    )
    truth = {name: float(beta_vec[j]) for j, name in enumerate(dm.column_names)}
    return records, truth, breaks


def generate(spec: SynthSpec) -> RecordSet:
    """Draw a synthetic RecordSet per the spec; deterministic for a seed."""
    records, _, _ = _materialize(spec)
    note = (
        f"synth.generate: n={spec.n}, seed={spec.seed}, k={spec.k}, "
        f"noise_sd={spec.noise_sd}, planted={sorted(spec.beta)}"
    )
    return RecordSet(records=records, provenance=(note,))


def planted_truth(spec: SynthSpec) -> dict[str, float]:
    """True coefficient per induced design column (zeros where not planted)."""
    _, truth, _ = _materialize(spec)
    return truth
