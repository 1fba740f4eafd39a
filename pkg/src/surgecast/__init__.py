"""Early warning of alert-volume surges in IDS alert streams.

Per-minute severity-stratified counts are smoothed into an intensity
estimate, enriched with momentum and volatility, labeled by a leakage-safe
extreme-regime rule, and classified by a small gradient-boosted model.
A point-process toolkit (Poisson and self-exciting fits, time-rescaling
diagnostics, synthetic scenario generation) backs the statistical side.
"""

from .errors import (
    ConvergenceError,
    ModelFormatError,
    StreamFormatError,
    SurgecastError,
    ValidationError,
)
from .features import FeatureConfig, FeatureFrame, FeatureStream, featurize
from .ingest import (
    AlertRecord,
    BinnedSeries,
    IngestConfig,
    STRATUM_ORDER,
    Severity,
    bin_alerts,
    bin_by_stratum,
)
from .labels import RegimeLabelSet, SplitPlan, fit_threshold_then_label
from .model import TrainedForest, TrainingConfig, predict_proba, train_gbdt

__version__ = "0.1.0"

__all__ = [
    "AlertRecord",
    "BinnedSeries",
    "ConvergenceError",
    "FeatureConfig",
    "FeatureFrame",
    "FeatureStream",
    "IngestConfig",
    "ModelFormatError",
    "RegimeLabelSet",
    "STRATUM_ORDER",
    "Severity",
    "SplitPlan",
    "StreamFormatError",
    "SurgecastError",
    "TrainedForest",
    "TrainingConfig",
    "ValidationError",
    "__version__",
    "bin_alerts",
    "bin_by_stratum",
    "featurize",
    "fit_threshold_then_label",
    "predict_proba",
    "train_gbdt",
]
