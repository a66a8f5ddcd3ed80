"""Calibration-weighted regression toolkit for studying how review-report
length relates to citation impact."""

from .design import DesignMatrix, ModelSpec, build_design
from .diagnostics import (
    DiagnosticsReport,
    breusch_pagan,
    exclude_influential,
    influence,
    run_diagnostics,
    vif,
)
from .discretize import BreakSet, FisherBreaksDiscretizer, assign_class, assign_classes, fisher_breaks
from .errors import ConfigError, DataError, NumericalError, SchemaError, ToolkitError
from .pipeline import PipelineConfig, ReportBundle, run_pipeline, write_report
from .raking import (
    CalibrationSpec,
    MarginTarget,
    RakingCalibrator,
    WeightVector,
    rake,
    weighted_marginals,
)
from .records import (
    FilterPolicy,
    PublicationRecord,
    RecordSet,
    filter_eligible,
    iqr_exclude,
    load_records,
    select_one_report,
    write_records,
)
from .regress import (
    CoefficientTable,
    FitResult,
    RobustLinearRegression,
    coefficient_table,
    fit_wls,
    robust_covariance,
)
from .synth import SynthSpec, generate, planted_truth, population_calibration_spec, sample_calibration_spec

__version__ = "0.1.0"

__all__ = [
    "BreakSet",
    "CalibrationSpec",
    "CoefficientTable",
    "ConfigError",
    "DataError",
    "DesignMatrix",
    "DiagnosticsReport",
    "FilterPolicy",
    "FisherBreaksDiscretizer",
    "FitResult",
    "MarginTarget",
    "ModelSpec",
    "NumericalError",
    "PipelineConfig",
    "PublicationRecord",
    "RakingCalibrator",
    "RecordSet",
    "ReportBundle",
    "RobustLinearRegression",
    "SchemaError",
    "SynthSpec",
    "ToolkitError",
    "WeightVector",
    "assign_class",
    "assign_classes",
    "breusch_pagan",
    "build_design",
    "coefficient_table",
    "exclude_influential",
    "filter_eligible",
    "fisher_breaks",
    "fit_wls",
    "generate",
    "influence",
    "iqr_exclude",
    "load_records",
    "planted_truth",
    "population_calibration_spec",
    "rake",
    "robust_covariance",
    "run_diagnostics",
    "run_pipeline",
    "sample_calibration_spec",
    "select_one_report",
    "vif",
    "weighted_marginals",
    "write_records",
    "write_report",
]
