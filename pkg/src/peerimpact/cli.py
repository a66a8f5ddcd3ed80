"""Command-line interface: one subcommand per pipeline stage plus synth and
an end-to-end pipeline runner driven by a JSON config.

Each subcommand reads and writes explicit file paths; there is no hidden
state. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path

import click
import numpy as np

from .design import ModelSpec, build_design
from .diagnostics import (
    DEFAULT_COOK_THRESHOLD,
    DEFAULT_HAT_THRESHOLD,
    DiagnosticsReport,
    run_diagnostics,
    write_plot_data,
)
from .discretize import BreakSet, fisher_breaks
from .errors import ConfigError, DataError, NumericalError, SchemaError
from .pipeline import PipelineConfig, ReportBundle, run_pipeline, write_report
from .raking import CalibrationSpec, load_weights_csv, rake
from .records import (
    FilterPolicy,
    RecordSet,
    filter_eligible,
    iqr_exclude,
    load_records,
    select_one_report,
    subset_by_ids,
    write_records,
)
from .regress import coefficient_table, fit_wls
from .synth import SynthSpec, generate


def _fail(code: int, exc: Exception):
    click.echo(f"error: {exc}", err=True)
    raise SystemExit(code)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(2, exc)
        except (SchemaError, DataError) as exc:
            _fail(3, exc)
        except NumericalError as exc:
            _fail(4, exc)

    return wrapper


def _prov_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".provenance.txt")


def _load(path: str, schema: dict | None = None) -> RecordSet:
    rs = load_records(path, schema)
    sidecar = _prov_path(Path(path))
    if sidecar.exists():
        prior = tuple(line for line in sidecar.read_text(encoding="utf-8").splitlines() if line)
        rs = RecordSet(records=rs.records, provenance=prior + rs.provenance)
    return rs


def _write(rs: RecordSet, path: str) -> None:
    write_records(rs, path)
    _prov_path(Path(path)).write_text("\n".join(rs.provenance) + "\n", encoding="utf-8")


def _fit_from_files(records_path: str, breaks_path: str, weights_path: str | None, vocab_from: str | None):
    rs = _load(records_path)
    breaks = BreakSet.load(breaks_path)
    vocab_rs = _load(vocab_from) if vocab_from else rs
    model = ModelSpec(
        length_breaks=breaks,
        discipline_levels=tuple(sorted(set().union(*(r.disciplines for r in vocab_rs.records)))),
        year_levels=tuple(sorted({r.pub_year for r in vocab_rs.records})),
    )
    weights = load_weights_csv(rs, weights_path) if weights_path else None
    dm = build_design(rs, model, weights)
    return rs, fit_wls(dm)


@click.group()
def main():
    """Calibration-weighted analysis of review-report length and citations."""


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(), help="Raw CSV to ingest.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Canonical records CSV to write.")
@click.option("--schema", default=None, help="JSON object mapping logical column names to file headers.")
@click.option("--reject-duplicate-ids", is_flag=True, help="Fail on duplicate pub_id values.")
@_handle_errors
def ingest(input_path, out_path, schema, reject_duplicate_ids):
    """Read a raw CSV and write it back in the canonical schema."""
    mapping = None
    if schema:
        try:
            mapping = json.loads(schema)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--schema is not valid JSON: {exc}") from None
    rs = load_records(input_path, mapping, allow_duplicate_ids=not reject_duplicate_ids)
    _write(rs, out_path)
    click.echo(f"ingested {len(rs)} records -> {out_path}")


@main.command("filter")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--min-year", default=2010, show_default=True)
@click.option("--max-year", default=2020, show_default=True)
@click.option("--doc-types", default="", help="Comma-separated allowed doc types (empty = any).")
@click.option("--require-complete-metadata", is_flag=True)
@_handle_errors
def filter_cmd(input_path, out_path, min_year, max_year, doc_types, require_complete_metadata):
    """Apply the eligibility policy (year window, doc types)."""
    policy = FilterPolicy(
        min_year=min_year,
        max_year=max_year,
        allowed_doc_types=frozenset(t.strip() for t in doc_types.split(",") if t.strip()),
        require_complete_metadata=require_complete_metadata,
    )
    rs = filter_eligible(_load(input_path), policy)
    _write(rs, out_path)
    click.echo(f"filtered -> {len(rs)} records -> {out_path}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@_handle_errors
def select(input_path, out_path, seed):
    """Keep one report per publication (uniform, seeded)."""
    rs = select_one_report(_load(input_path), seed)
    _write(rs, out_path)
    click.echo(f"selected {len(rs)} publications -> {out_path}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--excluded-out", default=None, type=click.Path())
@click.option("--fences-out", default=None, type=click.Path())
@click.option("--factor", default=5.0, show_default=True)
@_handle_errors
def fence(input_path, out_path, excluded_out, fences_out, factor):
    """Exclude report lengths outside [Q1 - f*IQR, Q3 + f*IQR]."""
    kept, excluded, fences = iqr_exclude(_load(input_path), factor)
    _write(kept, out_path)
    if excluded_out:
        _write(excluded, excluded_out)
    if fences_out:
        Path(fences_out).write_text(json.dumps({"lo": fences[0], "hi": fences[1]}) + "\n", encoding="utf-8")
    click.echo(f"kept {len(kept)}, excluded {len(excluded)} (fences {fences}) -> {out_path}")


@main.command("rake")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--calibration", "calibration_path", required=True, type=click.Path(), help="CalibrationSpec JSON file.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Weights CSV (pub_id, weight).")
@click.option("--summary-out", default=None, type=click.Path())
@_handle_errors
def rake_cmd(input_path, calibration_path, out_path, summary_out):
    """Compute raking-ratio calibration weights."""
    cal_path = Path(calibration_path)
    if not cal_path.exists():
        raise ConfigError(f"calibration file not found: {cal_path}")
    spec = CalibrationSpec.from_json(cal_path.read_text(encoding="utf-8"))
    rs = _load(input_path)
    weights = rake(rs, spec)
    weights.save_csv(rs, out_path)
    if summary_out:
        Path(summary_out).write_text(json.dumps(weights.summary(), sort_keys=True) + "\n", encoding="utf-8")
    state = "converged" if weights.converged else "did NOT converge"
    click.echo(f"raking {state} in {weights.iterations_used} sweeps (deviation {weights.final_deviation:.3g}) -> {out_path}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(), help="BreakSet JSON file.")
@click.option("--k", default=5, show_default=True)
@click.option("--weights", "weights_path", default=None, type=click.Path(), help="Optional calibration weights CSV.")
@_handle_errors
def discretize(input_path, out_path, k, weights_path):
    """Fit optimal length classes on the records' report lengths."""
    rs = _load(input_path)
    w = load_weights_csv(rs, weights_path).weights if weights_path else None
    breaks = fisher_breaks(rs.report_lengths(), k, weights=w)
    breaks.save(out_path)
    click.echo(f"fitted {k} classes {list(breaks.labels())} (cost {breaks.cost:.6g}) -> {out_path}")


def _fit_command_body(input_path, breaks_path, weights_path, vocab_from, out_dir, variant):
    rs, result = _fit_from_files(input_path, breaks_path, weights_path, vocab_from)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = coefficient_table(result, variant)
    table.save_csv(out / "coefficients.csv")
    (out / "fit.json").write_text(
        json.dumps(
            {
                "n": result.n,
                "p": result.p,
                "sigma2": result.sigma2,
                "weighted": result.weighted,
                "robust_variant": variant,
            },
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    import csv as _csv

    with (out / "residuals.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["pub_id", "fitted", "residual", "hat"])
        for i, rid in enumerate(result.design.row_ids):
            writer.writerow([rid, repr(float(result.fitted[i])), repr(float(result.residuals[i])), repr(float(result.hat_diag[i]))])
    click.echo(f"fit n={result.n} p={result.p} sigma2={result.sigma2:.6g} -> {out}")


_fit_options = [
    click.option("--input", "input_path", required=True, type=click.Path()),
    click.option("--breaks", "breaks_path", required=True, type=click.Path()),
    click.option("--weights", "weights_path", default=None, type=click.Path()),
    click.option("--vocab-from", default=None, type=click.Path(), help="Records file that pins the dummy vocabularies."),
    click.option("--out-dir", required=True, type=click.Path()),
    click.option("--variant", default="HC1", show_default=True, type=click.Choice(["HC0", "HC1", "HC2", "HC3"])),
]


def _with_options(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return deco


@main.command()
@_with_options(_fit_options)
@_handle_errors
def fit(input_path, breaks_path, weights_path, vocab_from, out_dir, variant):
    """Weighted least-squares fit of log1p(citations) on the design."""
    _fit_command_body(input_path, breaks_path, weights_path, vocab_from, out_dir, variant)


@main.command()
@_with_options(_fit_options)
@_handle_errors
def refit(input_path, breaks_path, weights_path, vocab_from, out_dir, variant):
    """Refit after exclusion (same contract as fit, kept records as input)."""
    _fit_command_body(input_path, breaks_path, weights_path, vocab_from, out_dir, variant)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--breaks", "breaks_path", required=True, type=click.Path())
@click.option("--weights", "weights_path", default=None, type=click.Path())
@click.option("--vocab-from", default=None, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(), help="Diagnostics JSON file.")
@click.option("--plots-dir", default=None, type=click.Path())
@click.option("--cook", default=DEFAULT_COOK_THRESHOLD, show_default=True)
@click.option("--hat", default=DEFAULT_HAT_THRESHOLD, show_default=True)
@click.option("--classical-bp", is_flag=True, help="Use the classical rather than studentized test form.")
@_handle_errors
def diagnose(input_path, breaks_path, weights_path, vocab_from, out_path, plots_dir, cook, hat, classical_bp):
    """VIF, influence measures and the heteroscedasticity test for one fit."""
    _, result = _fit_from_files(input_path, breaks_path, weights_path, vocab_from)
    report = run_diagnostics(result, cook, hat, studentized=not classical_bp)
    Path(out_path).write_text(report.to_json() + "\n", encoding="utf-8")
    if plots_dir:
        write_plot_data(result, plots_dir)
    click.echo(
        f"diagnostics: {len(report.flagged_rows)} rows flagged, "
        f"test stat={report.bp_stat:.4g} (p={report.bp_pvalue:.4g}) -> {out_path}"
    )


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--diagnostics", "diag_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--flagged-out", default=None, type=click.Path())
@_handle_errors
def exclude(input_path, diag_path, out_path, flagged_out):
    """Drop the rows a diagnostics report flagged as influential."""
    rs = _load(input_path)
    report = DiagnosticsReport.from_json(Path(diag_path).read_text(encoding="utf-8"))
    flagged_ids = [rid for rid, _ in report.flagged_rows]
    if len(flagged_ids) >= len(rs):
        raise DataError("exclusion would remove every record")
    note = f"exclude: {len(flagged_ids)} rows flagged by {diag_path}"
    kept = subset_by_ids(rs, flagged_ids, note)
    _write(kept, out_path)
    if flagged_out:
        import csv as _csv

        with Path(flagged_out).open("w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["pub_id", "reason"])
            writer.writerows(report.flagged_rows)
    click.echo(f"kept {len(kept)} records ({len(flagged_ids)} excluded) -> {out_path}")


@main.command()
@click.option("--bundle", "bundle_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--format", "report_format", default="csv", show_default=True, type=click.Choice(["csv", "json"]))
@_handle_errors
def report(bundle_path, out_dir, report_format):
    """Render report files (coefficients, forest data, plot data, summary)."""
    path = Path(bundle_path)
    if not path.exists():
        raise ConfigError(f"bundle not found: {path}")
    bundle = ReportBundle.from_json(path.read_text(encoding="utf-8"))
    written = write_report(bundle, out_dir, report_format)
    for p in written:
        click.echo(f"wrote {p}")


@main.command()
@click.option("--n", default=None, type=int, help="Number of report records.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--spec", "spec_path", default=None, type=click.Path(), help="Full SynthSpec JSON (overrides --n/--seed).")
@_handle_errors
def synth(n, seed, out_path, spec_path):
    """Generate a synthetic corpus in the ingestible CSV schema."""
    if spec_path:
        spec = SynthSpec.from_json(Path(spec_path).read_text(encoding="utf-8"))
    elif n is not None:
        spec = SynthSpec(n=n, seed=seed)
    else:
        raise ConfigError("pass --n or --spec")
    rs = generate(spec)
    _write(rs, out_path)
    click.echo(f"generated {len(rs)} records (seed {spec.seed}) -> {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--input", "input_override", default=None, type=click.Path(), help="Override the config's input path.")
@click.option("--out", "out_override", default=None, type=click.Path(), help="Override the config's output directory.")
@click.option("--seed", "seed_override", default=None, type=int, help="Override the config's seed.")
@click.option("--verbose", is_flag=True)
@_handle_errors
def pipeline(config_path, input_override, out_override, seed_override, verbose):
    """Run every stage in order from a JSON config."""
    import dataclasses

    cfg = PipelineConfig.load(config_path)
    if input_override:
        cfg = dataclasses.replace(cfg, input=input_override)
    if out_override:
        cfg = dataclasses.replace(cfg, output_dir=out_override)
    if seed_override is not None:
        cfg = dataclasses.replace(cfg, seed=seed_override)
    bundle = run_pipeline(cfg)
    if verbose:
        for stage, count in bundle.stage_counts:
            click.echo(f"{stage:<12} {count}")
        for note in bundle.provenance:
            click.echo(f"# {note}")
    click.echo(f"pipeline complete -> {cfg.output_dir} (config_hash {bundle.config_hash})")


if __name__ == "__main__":
    main()
