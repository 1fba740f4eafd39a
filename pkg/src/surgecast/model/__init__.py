"""Gradient-boosted classifier, evaluation metrics, and the ablation harness."""

from .gbdt import (
    Tree,
    TrainedForest,
    TrainingConfig,
    dumps_forest,
    load_model,
    loads_forest,
    predict_proba,
    predict_raw,
    save_model,
    train_gbdt,
)
from .metrics import (
    ABLATION_CONFIGS,
    ConfusionCounts,
    EvalReport,
    ablation_suite,
    binary_metrics,
    evaluate,
    rank_auc,
    subset_name,
    write_eval_csv,
)

__all__ = [
    "Tree",
    "TrainedForest",
    "TrainingConfig",
    "dumps_forest",
    "load_model",
    "loads_forest",
    "predict_proba",
    "predict_raw",
    "save_model",
    "train_gbdt",
    "ABLATION_CONFIGS",
    "ConfusionCounts",
    "EvalReport",
    "ablation_suite",
    "binary_metrics",
    "evaluate",
    "rank_auc",
    "subset_name",
    "write_eval_csv",
]
