"""Publication/review records: CSV ingestion, eligibility filters, one-report
selection, and IQR fencing of extreme report lengths.

All operations are pure: each returns a new RecordSet carrying an appended
provenance trail. RecordSets are immutable after construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, SchemaError

# Two-year impact factor bands, lower-bound inclusive.
IMPACT_BAND_EDGES = (0.8, 1.2, 1.8, 2.2)
IMPACT_BAND_LABELS = ("<0.8", "[0.8,1.2)", "[1.2,1.8)", "[1.8,2.2)", ">=2.2")

# Canonical CSV column names; a schema mapping may rename any of them.
REQUIRED_COLUMNS = (
    "pub_id",
    "report_length",
    "citations",
    "pub_year",
    "open_access",
    "n_funders",
    "n_countries",
    "disciplines",
    "journal_impact",
)
OPTIONAL_COLUMNS = ("doc_type",)


def impact_band(journal_impact: float) -> str:
    """Map a two-year impact factor onto its 5-band class label."""
    if journal_impact < 0:
        raise DataError(f"journal_impact must be non-negative, got {journal_impact}")
    idx = int(np.searchsorted(IMPACT_BAND_EDGES, journal_impact, side="right"))
    return IMPACT_BAND_LABELS[idx]


@dataclass(frozen=True)
class PublicationRecord:
    """One review report attached to one publication.

    `impact_class` is derived from `journal_impact` when omitted; when given it
    must agree with the banding.
    """

    pub_id: str
    report_length: int
    citations: int
    pub_year: int
    open_access: bool
    n_funders: int
    n_countries: int
    disciplines: frozenset[str]
    journal_impact: float
    impact_class: str = ""
    doc_type: str | None = None

    def __post_init__(self):
        if self.report_length < 0:
            raise DataError(f"report_length must be >= 0, got {self.report_length}")
        if self.citations < 0:
            raise DataError(f"citations must be >= 0, got {self.citations}")
        if self.n_funders < 0:
            raise DataError(f"n_funders must be >= 0, got {self.n_funders}")
        if self.n_countries < 1:
            raise DataError(f"n_countries must be >= 1, got {self.n_countries}")
        if not self.disciplines:
            raise DataError("disciplines must contain at least one label")
        band = impact_band(self.journal_impact)
        if not self.impact_class:
            object.__setattr__(self, "impact_class", band)
        elif self.impact_class != band:
            raise DataError(
                f"impact_class {self.impact_class!r} inconsistent with "
                f"journal_impact {self.journal_impact} (expected {band!r})"
            )


@dataclass(frozen=True)
class RecordSet:
    """Ordered, immutable collection of records plus a filter audit trail."""

    records: tuple[PublicationRecord, ...]
    provenance: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def with_note(self, note: str) -> "RecordSet":
        return replace(self, provenance=self.provenance + (note,))

    def pub_ids(self) -> tuple[str, ...]:
        return tuple(r.pub_id for r in self.records)

    def report_lengths(self) -> np.ndarray:
        return np.array([r.report_length for r in self.records], dtype=float)


@dataclass(frozen=True)
class FilterPolicy:
    """Eligibility policy: year window, document types, metadata completeness."""

    min_year: int = 2010
    max_year: int = 2020
    allowed_doc_types: frozenset[str] = frozenset()
    require_complete_metadata: bool = False

    def __post_init__(self):
        if self.min_year > self.max_year:
            raise ConfigError(f"min_year {self.min_year} > max_year {self.max_year}")
        object.__setattr__(self, "allowed_doc_types", frozenset(self.allowed_doc_types))


def _parse_int(text: str, row: int, column: str, minimum: int | None = None) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise DataError(f"cannot parse {text!r} as integer", row=row, column=column) from None
    if minimum is not None and value < minimum:
        raise DataError(f"value {value} violates {column} >= {minimum}", row=row, column=column)
    return value


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise DataError(f"cannot parse {text!r} as number", row=row, column=column) from None


def _parse_flag(text: str, row: int, column: str) -> bool:
    norm = text.strip().lower()
    if norm in ("1", "yes"):
        return True
    if norm in ("0", "no"):
        return False
    raise DataError(f"cannot parse {text!r} as 0/1 or yes/no flag", row=row, column=column)


def load_records(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    allow_duplicate_ids: bool = True,
) -> RecordSet:
    """Read a record CSV into a RecordSet.

    Parameters
    ----------
    path : CSV file with a header row (UTF-8, comma-delimited, RFC-4180
        quoting). Required logical columns: pub_id, report_length, citations,
        pub_year, open_access (0/1 or yes/no), n_funders, n_countries,
        disciplines (semicolon-separated labels), journal_impact. Optional:
        doc_type.
    schema : optional mapping from logical column name to the CSV header name
        actually used in the file; identity for unmapped columns.
    allow_duplicate_ids : duplicate pub_ids are legal by default (several
        reports may exist per publication); pass False to reject them.

    Raises SchemaError for a missing file or column, DataError for any cell
    that cannot be parsed or violates a record invariant (the error names the
    offending row and column). Row numbers count from 1 at the first data row.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    schema = dict(schema or {})
    colmap = {logical: schema.get(logical, logical) for logical in REQUIRED_COLUMNS + OPTIONAL_COLUMNS}

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for logical in REQUIRED_COLUMNS:
            if colmap[logical] not in header:
                raise SchemaError(f"missing column {colmap[logical]!r} (for {logical}) in {path}")
        has_doc_type = colmap["doc_type"] in header

        records: list[PublicationRecord] = []
        seen: set[str] = set()
        for i, row in enumerate(reader, start=1):
            get = lambda logical: row.get(colmap[logical]) or ""
            pub_id = get("pub_id").strip()
            if not pub_id:
                raise DataError("empty pub_id", row=i, column=colmap["pub_id"])
            if pub_id in seen and not allow_duplicate_ids:
                raise DataError(f"duplicate pub_id {pub_id!r}", row=i, column=colmap["pub_id"])
            seen.add(pub_id)
            labels = frozenset(s.strip() for s in get("disciplines").split(";") if s.strip())
            if not labels:
                raise DataError("disciplines must contain at least one label", row=i, column=colmap["disciplines"])
            doc_type = get("doc_type").strip() if has_doc_type else ""
            try:
                record = PublicationRecord(
                    pub_id=pub_id,
                    report_length=_parse_int(get("report_length"), i, colmap["report_length"], minimum=0),
                    citations=_parse_int(get("citations"), i, colmap["citations"], minimum=0),
                    pub_year=_parse_int(get("pub_year"), i, colmap["pub_year"]),
                    open_access=_parse_flag(get("open_access"), i, colmap["open_access"]),
                    n_funders=_parse_int(get("n_funders"), i, colmap["n_funders"], minimum=0),
                    n_countries=_parse_int(get("n_countries"), i, colmap["n_countries"], minimum=1),
                    disciplines=labels,
                    journal_impact=_parse_float(get("journal_impact"), i, colmap["journal_impact"]),
                    doc_type=doc_type or None,
                )
            except DataError as exc:
                if exc.row is None:
                    raise DataError(str(exc), row=i) from None
                raise
            records.append(record)

    return RecordSet(
        records=tuple(records),
        provenance=(f"load_records: {len(records)} records from {path}",),
    )


def write_records(rs: RecordSet, path: str | Path) -> None:
    """Write records back to the canonical CSV schema (lossless round trip)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    has_doc_type = any(r.doc_type for r in rs.records)
    columns = list(REQUIRED_COLUMNS) + (["doc_type"] if has_doc_type else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rs.records:
            row = [
                r.pub_id,
                r.report_length,
                r.citations,
                r.pub_year,
                "1" if r.open_access else "0",
                r.n_funders,
                r.n_countries,
                ";".join(sorted(r.disciplines)),
                repr(r.journal_impact),
            ]
            if has_doc_type:
                row.append(r.doc_type or "")
            writer.writerow(row)


def filter_eligible(rs: RecordSet, policy: FilterPolicy) -> RecordSet:
    """Keep records inside the policy's year window and document-type set.

    Records with a doc_type outside `allowed_doc_types` (when the set is
    non-empty) are dropped; records with no doc_type are dropped only when
    `require_complete_metadata` is set. Idempotent for a fixed policy.
    """
    kept = []
    for r in rs.records:
        if not (policy.min_year <= r.pub_year <= policy.max_year):
            continue
        if r.doc_type is None:
            if policy.require_complete_metadata:
                continue
        elif policy.allowed_doc_types and r.doc_type not in policy.allowed_doc_types:
            continue
        kept.append(r)
    note = (
        f"filter_eligible: years [{policy.min_year},{policy.max_year}], "
        f"doc_types={sorted(policy.allowed_doc_types) or 'any'}, "
        f"complete_metadata={policy.require_complete_metadata}: "
        f"{len(rs)} in, {len(kept)} out"
    )
    return RecordSet(records=tuple(kept), provenance=rs.provenance + (note,))


def select_one_report(rs: RecordSet, seed: int) -> RecordSet:
    """Keep exactly one record per pub_id, chosen uniformly at random.

    Publications with a single report pass through unchanged; the draw is
    deterministic for a fixed seed; surviving records keep their input order.
    """
    groups: dict[str, list[int]] = {}
    for idx, r in enumerate(rs.records):
        groups.setdefault(r.pub_id, []).append(idx)

    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    # Iterate in first-occurrence order so the draw sequence is reproducible.
    for pub_id, indices in groups.items():
        if len(indices) == 1:
            chosen.append(indices[0])
        else:
            chosen.append(indices[int(rng.integers(0, len(indices)))])
    chosen.sort()
    kept = tuple(rs.records[i] for i in chosen)
    note = (
        f"select_one_report: seed={seed}, {len(rs)} reports -> "
        f"{len(kept)} publications ({len(rs) - len(kept)} dropped)"
    )
    return RecordSet(records=kept, provenance=rs.provenance + (note,))


def iqr_exclude(
    rs: RecordSet, factor: float = 5.0
) -> tuple[RecordSet, RecordSet, tuple[float, float]]:
    """Fence extreme report lengths at [Q1 - factor*IQR, Q3 + factor*IQR].

    Quartiles use linear interpolation between order statistics (numpy's
    default, the "type 7" convention), recorded in provenance. Returns
    (kept, excluded, (lo, hi)); kept and excluded partition the input.
    """
    if factor <= 0:
        raise ConfigError(f"IQR factor must be positive, got {factor}")
    if len(rs) == 0:
        raise DataError("iqr_exclude requires a non-empty RecordSet")
    lengths = rs.report_lengths()
    q1, q3 = np.quantile(lengths, [0.25, 0.75])  # method="linear" (type 7)
    iqr = q3 - q1
    lo, hi = float(q1 - factor * iqr), float(q3 + factor * iqr)
    kept, excluded = [], []
    for r in rs.records:
        (kept if lo <= r.report_length <= hi else excluded).append(r)
    note = (
        f"iqr_exclude: factor={factor}, Q1={q1}, Q3={q3}, fences=[{lo},{hi}] "
        f"(quantile rule: linear interpolation, type 7): "
        f"kept {len(kept)}, excluded {len(excluded)}"
    )
    return (
        RecordSet(records=tuple(kept), provenance=rs.provenance + (note,)),
        RecordSet(records=tuple(excluded), provenance=rs.provenance + (note,)),
        (lo, hi),
    )


def subset_by_ids(rs: RecordSet, drop_ids: Iterable[str], note: str) -> RecordSet:
    """Remove records whose pub_id is in drop_ids (used by influence exclusion)."""
    drop = set(drop_ids)
    kept = tuple(r for r in rs.records if r.pub_id not in drop)
    return RecordSet(records=kept, provenance=rs.provenance + (note,))
