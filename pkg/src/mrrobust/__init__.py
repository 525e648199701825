"""Weak-instrument robust inference for two-sample summary-data Mendelian randomization."""

__version__ = "0.1.0"

from .diagnostics import StrengthReport, overall_f, per_iv_f
from .inference import (
    ConfidenceRegion,
    Interval,
    LimlEstimate,
    UnsupportedInputError,
    detect_invalid_instruments,
    invert_test,
    mr_liml,
    q_pleiotropy,
)
from .robust_tests import (
    ALL_KINDS,
    QTriple,
    TestKind,
    TestResult,
    clr_pvalue,
    mr_ar,
    mr_clr,
    mr_k,
    q_statistics,
    r_statistic,
    run_test,
    s_statistic,
)
from .simulation import DgpConfig, ExperimentConfig, ExperimentResult, generate_dataset, run_experiment
from .summary_data import (
    CorrelationSpec,
    SummaryData,
    SummaryDataError,
    adjust_for_correlation,
    banded_correlation,
    validate,
)
