"""End-to-end pipeline: ingest -> filter -> select -> fence -> rake ->
discretize -> fit -> diagnose -> exclude -> robust refit -> report.

Every stage's artifact is persisted under the configured output directory;
reruns with an identical config and input reproduce every output byte.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import DEFAULT_COVARIATES, ModelSpec, build_design
from .diagnostics import (
    DEFAULT_COOK_THRESHOLD,
    DEFAULT_HAT_THRESHOLD,
    DiagnosticsReport,
    exclude_influential,
    influence_plot_data,
    run_diagnostics,
    write_plot_data,
)
from .discretize import BreakSet, fisher_breaks
from .errors import ConfigError, NumericalError
from .raking import CalibrationSpec, WeightVector, rake
from .records import FilterPolicy, RecordSet, filter_eligible, iqr_exclude, load_records, select_one_report, write_records
from .regress import CoefficientTable, coefficient_table, fit_wls

PIPELINE_STAGES = ("ingest", "filter", "select", "fence", "rake", "discretize", "fit", "diagnose", "exclude", "refit", "report")


@dataclass(frozen=True)
class PipelineConfig:
    """Declarative run configuration; defaults echo the analysis constants
    (IQR factor 5, k=5, thresholds 0.02/0.01, HC1, one exclusion round)."""

    input: str
    output_dir: str
    seed: int = 0
    schema: dict | None = None
    filter_policy: FilterPolicy = field(default_factory=FilterPolicy)
    iqr_factor: float = 5.0
    calibration: CalibrationSpec | None = None
    n_length_classes: int = 5
    discipline_mode: str = "multi_hot"
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    robust_variant: str = "HC1"
    cook_threshold: float = DEFAULT_COOK_THRESHOLD
    hat_threshold: float = DEFAULT_HAT_THRESHOLD
    max_exclusion_rounds: int = 1
    re_rake_after_exclusion: bool = False
    unweighted: bool = False

    def __post_init__(self):
        if self.iqr_factor <= 0:
            raise ConfigError(f"iqr_factor must be positive, got {self.iqr_factor}")
        if self.n_length_classes < 1:
            raise ConfigError(f"n_length_classes must be >= 1, got {self.n_length_classes}")
        if self.cook_threshold <= 0 or self.hat_threshold <= 0:
            raise ConfigError("influence thresholds must be positive")
        if self.max_exclusion_rounds < 0:
            raise ConfigError("max_exclusion_rounds must be >= 0")

    def to_json(self) -> str:
        payload = {
            "input": self.input,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "schema": self.schema,
            "filter": {
                "min_year": self.filter_policy.min_year,
                "max_year": self.filter_policy.max_year,
                "allowed_doc_types": sorted(self.filter_policy.allowed_doc_types),
                "require_complete_metadata": self.filter_policy.require_complete_metadata,
            },
            "iqr_factor": self.iqr_factor,
            "calibration": None if self.calibration is None else json.loads(self.calibration.to_json()),
            "n_length_classes": self.n_length_classes,
            "model": {"discipline_mode": self.discipline_mode, "covariates": list(self.covariates)},
            "robust_variant": self.robust_variant,
            "cook_threshold": self.cook_threshold,
            "hat_threshold": self.hat_threshold,
            "max_exclusion_rounds": self.max_exclusion_rounds,
            "re_rake_after_exclusion": self.re_rake_after_exclusion,
            "unweighted": self.unweighted,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(payload, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("input", "output_dir"):
            if key not in payload:
                raise ConfigError(f"config missing required key {key!r}")
        filt = payload.get("filter", {})
        policy = FilterPolicy(
            min_year=int(filt.get("min_year", 2010)),
            max_year=int(filt.get("max_year", 2020)),
            allowed_doc_types=frozenset(filt.get("allowed_doc_types", [])),
            require_complete_metadata=bool(filt.get("require_complete_metadata", False)),
        )
        calibration = payload.get("calibration")
        spec = None if calibration is None else CalibrationSpec.from_json(json.dumps(calibration))
        model = payload.get("model", {})
        try:
            return cls(
                input=str(payload["input"]),
                output_dir=str(payload["output_dir"]),
                seed=int(payload.get("seed", 0)),
                schema=payload.get("schema"),
                filter_policy=policy,
                iqr_factor=float(payload.get("iqr_factor", 5.0)),
                calibration=spec,
                n_length_classes=int(payload.get("n_length_classes", 5)),
                discipline_mode=str(model.get("discipline_mode", "multi_hot")),
                covariates=tuple(model.get("covariates", DEFAULT_COVARIATES)),
                robust_variant=str(payload.get("robust_variant", "HC1")),
                cook_threshold=float(payload.get("cook_threshold", DEFAULT_COOK_THRESHOLD)),
                hat_threshold=float(payload.get("hat_threshold", DEFAULT_HAT_THRESHOLD)),
                max_exclusion_rounds=int(payload.get("max_exclusion_rounds", 1)),
                re_rake_after_exclusion=bool(payload.get("re_rake_after_exclusion", False)),
                unweighted=bool(payload.get("unweighted", False)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_json(path.read_text(encoding="utf-8"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


def unit_weights(n: int) -> WeightVector:
    return WeightVector(weights=np.ones(n), iterations_used=0, converged=True, final_deviation=0.0, notes=("unit weights",))


@dataclass(frozen=True)
class ReportBundle:
    """Everything the final report needs, serializable to one JSON file."""

    config_hash: str
    seed: int
    stage_counts: tuple[tuple[str, int], ...]
    fences: tuple[float, float]
    weight_summary: dict
    breaks: BreakSet
    table: CoefficientTable
    diagnostics_pre: DiagnosticsReport
    diagnostics_post: DiagnosticsReport
    flagged: tuple[tuple[str, str], ...]
    provenance: tuple[str, ...]
    plot_rows_pre: tuple[dict, ...]
    plot_rows_post: tuple[dict, ...]

    def to_json(self) -> str:
        payload = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "stage_counts": [[stage, count] for stage, count in self.stage_counts],
            "fences": list(self.fences),
            "weight_summary": self.weight_summary,
            "breaks": json.loads(self.breaks.to_json()),
            "table": json.loads(self.table.to_json()),
            "diagnostics_pre": json.loads(self.diagnostics_pre.to_json()),
            "diagnostics_post": json.loads(self.diagnostics_post.to_json()),
            "flagged": [[rid, reason] for rid, reason in self.flagged],
            "provenance": list(self.provenance),
            "plot_rows_pre": list(self.plot_rows_pre),
            "plot_rows_post": list(self.plot_rows_post),
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ReportBundle":
        from .regress import CoefficientRow

        payload = json.loads(text)
        table_payload = payload["table"]
        rows = tuple(
            CoefficientRow(
                term=r["term"],
                label=r["label"],
                estimate=float(r["estimate"]),
                se=float(r["se"]),
                t_stat=float(r["t_stat"]),
                p_value=float(r["p_value"]),
                ci_low=float(r["ci_low"]),
                ci_high=float(r["ci_high"]),
                significance=r["significance"],
                degenerate=bool(r["degenerate"]),
            )
            for r in table_payload["coefficients"]
        )
        table = CoefficientTable(rows=rows, variant=table_payload["variant"], references=table_payload["references"])
        return cls(
            config_hash=payload["config_hash"],
            seed=int(payload["seed"]),
            stage_counts=tuple((s, int(c)) for s, c in payload["stage_counts"]),
            fences=(float(payload["fences"][0]), float(payload["fences"][1])),
            weight_summary=payload["weight_summary"],
            breaks=BreakSet.from_json(json.dumps(payload["breaks"])),
            table=table,
            diagnostics_pre=DiagnosticsReport.from_json(json.dumps(payload["diagnostics_pre"])),
            diagnostics_post=DiagnosticsReport.from_json(json.dumps(payload["diagnostics_post"])),
            flagged=tuple((r, why) for r, why in payload["flagged"]),
            provenance=tuple(payload["provenance"]),
            plot_rows_pre=tuple(payload["plot_rows_pre"]),
            plot_rows_post=tuple(payload["plot_rows_post"]),
        )


def _subset_weights(w: WeightVector, rs_from: RecordSet, rs_to: RecordSet) -> WeightVector:
    by_id = {r.pub_id: float(v) for r, v in zip(rs_from.records, w.weights)}
    weights = np.array([by_id[r.pub_id] for r in rs_to.records])
    return dataclasses.replace(w, weights=weights, notes=w.notes + ("subset after influence exclusion",))


def run_pipeline(cfg: PipelineConfig) -> ReportBundle:
    """Execute every stage in order, persisting artifacts under output_dir.

    Raking non-convergence and rank deficiency raise NumericalError; the
    stages completed so far remain on disk for inspection.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.config_hash()
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")

    counts: list[tuple[str, int]] = []

    rs_raw = load_records(cfg.input, cfg.schema)
    counts.append(("ingest", len(rs_raw)))
    write_records(rs_raw, out / "records_ingested.csv")

    rs_filtered = filter_eligible(rs_raw, cfg.filter_policy)
    counts.append(("filter", len(rs_filtered)))
    write_records(rs_filtered, out / "records_filtered.csv")

    rs_selected = select_one_report(rs_filtered, cfg.seed)
    counts.append(("select", len(rs_selected)))
    write_records(rs_selected, out / "records_selected.csv")

    rs, fenced_out, fences = iqr_exclude(rs_selected, cfg.iqr_factor)
    counts.append(("fence", len(rs)))
    counts.append(("fenced_out", len(fenced_out)))
    write_records(rs, out / "records_fenced.csv")
    write_records(fenced_out, out / "records_fenced_out.csv")
    # Count ledger: fencing partitions the selected set.
    assert len(rs) + len(fenced_out) == len(rs_selected)

    if cfg.unweighted or cfg.calibration is None:
        weights = unit_weights(len(rs))
    else:
        weights = rake(rs, cfg.calibration)
        if not weights.converged:
            raise NumericalError(
                f"raking did not converge within {cfg.calibration.max_iter} sweeps "
                f"(deviation {weights.final_deviation})"
            )
    weights.save_csv(rs, out / "weights.csv")

    breaks = fisher_breaks(rs.report_lengths(), cfg.n_length_classes)
    breaks.save(out / "breaks.json")

    # Dummy vocabularies derive from the data entering each fit; after an
    # exclusion they are re-derived so a vanished level cannot leave a
    # constant column behind (the provenance notes any change).
    model = ModelSpec(
        length_breaks=breaks,
        covariates=cfg.covariates,
        discipline_mode=cfg.discipline_mode,
    )

    dm = build_design(rs, model, None if cfg.unweighted else weights)
    fit_pre = fit_wls(dm)
    coefficient_table(fit_pre, cfg.robust_variant).save_csv(out / "preliminary_coefficients.csv")
    diag_pre = run_diagnostics(fit_pre, cfg.cook_threshold, cfg.hat_threshold)
    (out / "diagnostics_pre.json").write_text(diag_pre.to_json() + "\n", encoding="utf-8")
    write_plot_data(fit_pre, out / "plots_pre")

    rs_kept = rs
    fit_final = fit_pre
    weights_final = weights
    flagged_all: list[tuple[str, str]] = []
    for _ in range(cfg.max_exclusion_rounds):
        kept, flagged = exclude_influential(rs_kept, fit_final, cfg.cook_threshold, cfg.hat_threshold)
        if not flagged:
            break
        flagged_all.extend(flagged)
        rs_kept = kept
        if cfg.unweighted or cfg.calibration is None:
            weights_final = unit_weights(len(rs_kept))
        elif cfg.re_rake_after_exclusion:
            weights_final = rake(rs_kept, cfg.calibration)
        else:
            weights_final = _subset_weights(weights_final, rs, rs_kept)
        dm_kept = build_design(rs_kept, model, None if cfg.unweighted else weights_final)
        fit_final = fit_wls(dm_kept)
    counts.append(("exclude", len(flagged_all)))
    column_note = ()
    if fit_final.design.column_names != dm.column_names:
        dropped = sorted(set(dm.column_names) - set(fit_final.design.column_names))
        column_note = (f"refit column set changed after exclusion; dropped: {dropped}",)
    counts.append(("refit", len(rs_kept)))
    write_records(rs_kept, out / "records_final.csv")
    with (out / "flagged_rows.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pub_id", "reason"])
        writer.writerows(flagged_all)

    diag_post = run_diagnostics(fit_final, cfg.cook_threshold, cfg.hat_threshold)
    (out / "diagnostics_post.json").write_text(diag_post.to_json() + "\n", encoding="utf-8")
    write_plot_data(fit_final, out / "plots_post")

    table = coefficient_table(fit_final, cfg.robust_variant)

    provenance = rs_kept.provenance + column_note + (
        f"rake: converged={weights.converged} in {weights.iterations_used} sweeps "
        f"(deviation {weights.final_deviation}); re_rake_after_exclusion={cfg.re_rake_after_exclusion}",
        f"discretize: k={cfg.n_length_classes}, boundaries={list(breaks.boundaries)}",
        f"fit: robust variant {cfg.robust_variant}, weighted={not cfg.unweighted and cfg.calibration is not None}",
        f"exclude: {len(flagged_all)} rows flagged at cook>{cfg.cook_threshold}, hat>{cfg.hat_threshold} "
        f"in <= {cfg.max_exclusion_rounds} round(s)",
        f"count ledger: {counts}",
        f"config_hash={cfg_hash}, seed={cfg.seed}",
    )

    bundle = ReportBundle(
        config_hash=cfg_hash,
        seed=cfg.seed,
        stage_counts=tuple(counts),
        fences=fences,
        weight_summary=weights_final.summary(),
        breaks=breaks,
        table=table,
        diagnostics_pre=diag_pre,
        diagnostics_post=diag_post,
        flagged=tuple(flagged_all),
        provenance=provenance,
        plot_rows_pre=tuple(influence_plot_data(fit_pre)),
        plot_rows_post=tuple(influence_plot_data(fit_final)),
    )
    (out / "bundle.json").write_text(bundle.to_json() + "\n", encoding="utf-8")
    write_report(bundle, out, "csv")
    write_report(bundle, out, "json")
    _write_manifest(out, cfg_hash, cfg.seed)
    return bundle


def write_report(bundle: ReportBundle, out_dir: str | Path, report_format: str = "csv") -> list[Path]:
    """Render the bundle: coefficient table, forest data, plot data, summary."""
    if report_format not in ("csv", "json"):
        raise ConfigError(f"report format must be csv or json, got {report_format!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if report_format == "csv":
        path = out / "coefficients.csv"
        bundle.table.save_csv(path)
        written.append(path)
        forest = out / "forest.csv"
        with forest.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["term", "label", "estimate", "ci_low", "ci_high", "significance"])
            for row in bundle.table.forest_data():
                writer.writerow(
                    [row["term"], row["label"], repr(row["estimate"]), repr(row["ci_low"]), repr(row["ci_high"]), row["significance"]]
                )
        written.append(forest)
        for tag, rows in (("pre", bundle.plot_rows_pre), ("post", bundle.plot_rows_post)):
            path = out / f"report_plot_data_{tag}.csv"
            cols = ["pub_id", "fitted", "residual", "std_residual", "sqrt_abs_std_residual", "hat", "cooks_d"]
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(cols)
                for row in rows:
                    writer.writerow([row["pub_id"]] + [repr(float(row[c])) for c in cols[1:]])
            written.append(path)
    else:
        path = out / "coefficients.json"
        path.write_text(bundle.table.to_json() + "\n", encoding="utf-8")
        written.append(path)
        forest = out / "forest.json"
        forest.write_text(json.dumps(bundle.table.forest_data(), sort_keys=True) + "\n", encoding="utf-8")
        written.append(forest)
        path = out / "report_plot_data.json"
        path.write_text(
            json.dumps({"pre": list(bundle.plot_rows_pre), "post": list(bundle.plot_rows_post)}, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        written.append(path)

    summary = out / "summary.txt"
    summary.write_text(_render_summary(bundle), encoding="utf-8")
    written.append(summary)
    return written


def _render_summary(bundle: ReportBundle) -> str:
    lines = [
        "Review-length citation analysis",
        f"config_hash: {bundle.config_hash}  seed: {bundle.seed}",
        "",
        "Stage counts:",
    ]
    for stage, count in bundle.stage_counts:
        lines.append(f"  {stage:<12} {count}")
    lines.append("")
    lines.append(f"Report-length fences: [{bundle.fences[0]}, {bundle.fences[1]}]")
    ws = bundle.weight_summary
    lines.append(
        f"Calibration weights: mean {ws['mean']:.6g}, min {ws['min']:.6g}, max {ws['max']:.6g}, "
        f"converged={ws['converged']} in {ws['iterations_used']} sweeps"
    )
    lines.append(f"Length classes (k={bundle.breaks.k}): " + ", ".join(bundle.breaks.labels()))
    lines.append("")
    lines.append(f"Heteroscedasticity (studentized test), post-exclusion: stat={bundle.diagnostics_post.bp_stat:.4g}, p={bundle.diagnostics_post.bp_pvalue:.4g}")
    vif_max = max(bundle.diagnostics_post.vif.values()) if bundle.diagnostics_post.vif else float("nan")
    lines.append(f"Max VIF: {vif_max:.4g}")
    lines.append(f"Influential rows excluded: {len(bundle.flagged)}")
    lines.append("")
    lines.append(f"Coefficients (robust {bundle.table.variant} standard errors):")
    lines.append(f"  {'term':<28} {'estimate':>12} {'se':>12} {'p':>10} sig")
    for row in bundle.table.rows:
        lines.append(f"  {row.term:<28} {row.estimate:>12.5f} {row.se:>12.5f} {row.p_value:>10.3g} {row.significance}")
    refs = ", ".join(f"{k}={v}" for k, v in sorted(bundle.table.references.items()))
    lines.append(f"  reference categories: {refs}")
    lines.append("")
    lines.append("Provenance:")
    for note in bundle.provenance:
        lines.append(f"  - {note}")
    return "\n".join(lines) + "\n"


def _write_manifest(out: Path, cfg_hash: str, seed: int) -> None:
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            files[str(path.relative_to(out))] = digest
    manifest = {"config_hash": cfg_hash, "seed": seed, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
