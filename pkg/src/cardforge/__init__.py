"""cardforge: subgroup bias audits of binary classifiers, rendered as model facts cards."""
from .audit import AuditConfig, AuditResult, FlagPolicy, SubgroupReport, run_audit, stratify
from .bootstrap import BootstrapConfig, Interval, bootstrap_ci, replicate_seed
from .cohort import CohortTable, FactorDescriptor, PredictionRecord, apply_bins, ingest_cohort
from .metrics import (
    UNAVAILABLE,
    UNDEFINED,
    ConfusionMatrix,
    MetricSet,
    confusion_matrix,
    metric_suite,
    roc_auc,
)

__version__ = "0.1.0"
