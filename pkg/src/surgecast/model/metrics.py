"""Binary classification metrics and the feature-ablation harness.

ROC-AUC is the Mann-Whitney rank statistic with ties averaged, which equals
the trapezoidal area under the ROC curve. Hard metrics are computed at a
fixed 0.5 probability threshold. AUC is undefined on single-class labels;
``evaluate`` still reports every other metric in that case.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from ..errors import ValidationError
from ..features import FEATURE_ALIASES, FeatureFrame, parse_feature_subset
from ..labels import RegimeLabelSet, test_rows, train_rows
from .gbdt import TrainedForest, TrainingConfig, predict_proba, train_gbdt

#: The feature configurations of the ablation table: intensity alone, the
#: two drop-one variants (drop volatility, drop momentum), and the full set.
ABLATION_CONFIGS: tuple[str, ...] = ("l", "l,m", "l,v", "l,m,v")

_SHORT = {name: alias for alias, name in FEATURE_ALIASES.items()}


def subset_name(schema: Sequence[str]) -> str:
    return ",".join(_SHORT[name] for name in schema)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass
class EvalReport:
    stratum: str
    config_name: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: float | None
    counts: ConfusionCounts
    n_test: int


def _check_binary(y) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("labels must be a non-empty 1-D array")
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValidationError("labels must be binary 0/1")
    return arr


def binary_metrics(y_true, prob, threshold: float = 0.5):
    """Hard metrics at the given probability threshold.

    Returns (accuracy, precision, recall, f1, ConfusionCounts). Precision
    and recall fall back to 0.0 when their denominator is empty.
    """
    y = _check_binary(y_true)
    p = np.asarray(prob, dtype=np.float64)
    if p.shape != y.shape:
        raise ValidationError("probabilities must align with labels")
    yhat = p >= threshold
    pos = y == 1.0
    tp = int(np.sum(yhat & pos))
    fp = int(np.sum(yhat & ~pos))
    fn = int(np.sum(~yhat & pos))
    tn = int(np.sum(~yhat & ~pos))
    accuracy = (tp + tn) / y.size
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return accuracy, precision, recall, f1, ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def rank_auc(y_true, scores) -> float:
    """ROC-AUC by the Mann-Whitney rank statistic, ties averaged."""
    y = _check_binary(y_true)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape:
        raise ValidationError("scores must align with labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC is undefined on single-class labels")
    ranks = rankdata(s)
    return float((ranks[y == 1.0].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(forest: TrainedForest, X, y_true, stratum: str = "",
             config_name: str = "", threshold: float = 0.5) -> EvalReport:
    """Score a trained model on held-out rows; AUC is None if single-class."""
    prob = predict_proba(forest, X)
    accuracy, precision, recall, f1, counts = binary_metrics(y_true, prob, threshold)
    try:
        auc = rank_auc(y_true, prob)
    except ValidationError:
        auc = None
    return EvalReport(
        stratum=stratum,
        config_name=config_name or subset_name(forest.feature_schema),
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        roc_auc=auc,
        counts=counts,
        n_test=int(np.asarray(y_true).size),
    )


def ablation_suite(frame: FeatureFrame, label_set: RegimeLabelSet,
                   configs: Sequence[str] = ABLATION_CONFIGS,
                   training: TrainingConfig | None = None,
                   meta: dict[str, str] | None = None) -> list[EvalReport]:
    """Train and evaluate one model per feature configuration.

    Every configuration sees identical train/test rows and labels, so the
    comparison isolates the feature set. Deterministic end to end.
    """
    if not configs:
        raise ValidationError("need at least one feature configuration")
    rows_train = train_rows(label_set, frame)
    rows_test = test_rows(label_set)
    y = label_set.labels
    reports: list[EvalReport] = []
    for spec in configs:
        schema = parse_feature_subset(spec)
        X = frame.matrix(schema)
        forest = train_gbdt(
            X[rows_train], y[rows_train], schema, config=training, meta=meta,
        )
        reports.append(
            evaluate(
                forest, X[rows_test], y[rows_test],
                stratum=frame.stratum, config_name=subset_name(schema),
            )
        )
    return reports


def write_eval_csv(reports: Iterable[EvalReport], path) -> None:
    # config cells join aliases with '+' so every row splits cleanly on ','
    lines = ["stratum,config,accuracy,auc,precision,recall,f1,tp,fp,tn,fn"]
    for r in reports:
        auc = "NA" if r.roc_auc is None else repr(float(r.roc_auc))
        c = r.counts
        lines.append(
            f"{r.stratum},{r.config_name.replace(',', '+')},{float(r.accuracy)!r},{auc},"
            f"{float(r.precision)!r},{float(r.recall)!r},{float(r.f1)!r},"
            f"{c.tp},{c.fp},{c.tn},{c.fn}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
