import numpy as np
import pytest

from surgecast.errors import ValidationError
from surgecast.features import FeatureConfig, featurize
from surgecast.labels import fit_threshold_then_label
from surgecast.model.gbdt import TrainingConfig, train_gbdt
from surgecast.model.metrics import (
    ABLATION_CONFIGS,
    ConfusionCounts,
    ablation_suite,
    binary_metrics,
    evaluate,
    rank_auc,
    subset_name,
    write_eval_csv,
)


def trapezoid_auc(y, scores):
    """Area under the tie-grouped ROC step curve, by trapezoidal rule."""
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    group_ends = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), y_sorted.size - 1]
    tps = np.cumsum(y_sorted)[group_ends]
    fps = np.cumsum(1.0 - y_sorted)[group_ends]
    tpr = np.r_[0.0, tps / tps[-1]]
    fpr = np.r_[0.0, fps / fps[-1]]
    return float(np.trapezoid(tpr, fpr))


def confusion_fixture():
    """1000 rows engineered to tp=93 fp=7 tn=892 fn=8 at threshold 0.5."""
    y = np.zeros(1000)
    prob = np.full(1000, 0.1)
    y[:93] = 1.0
    prob[:93] = 0.9     # tp
    prob[93:100] = 0.9  # fp
    y[100:108] = 1.0
    prob[100:108] = 0.2  # fn
    return y, prob


# --- hard metrics -----------------------------------------------------------


def test_confusion_fixture_exact():
    y, prob = confusion_fixture()
    accuracy, precision, recall, f1, counts = binary_metrics(y, prob)
    assert counts == ConfusionCounts(tp=93, fp=7, tn=892, fn=8)
    assert accuracy == 0.985
    assert precision == 0.93
    assert round(recall, 4) == 0.9208
    assert round(f1, 4) == 0.9254


def test_f1_harmonic_identity():
    y, prob = confusion_fixture()
    _, precision, recall, f1, _ = binary_metrics(y, prob)
    assert abs(f1 - 2.0 / (1.0 / precision + 1.0 / recall)) <= 1e-12


def test_counts_partition_the_rows():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 500).astype(np.float64)
    prob = rng.random(500)
    *_, counts = binary_metrics(y, prob)
    assert counts.tp + counts.fp + counts.tn + counts.fn == 500


def test_empty_denominators_fall_back_to_zero():
    y = np.array([0.0, 0.0, 1.0])
    prob = np.array([0.1, 0.2, 0.3])  # no predicted positives
    _, precision, recall, f1, counts = binary_metrics(y, prob)
    assert counts.tp == 0 and counts.fp == 0
    assert precision == 0.0 and recall == 0.0 and f1 == 0.0


def test_threshold_is_inclusive():
    y = np.array([1.0, 0.0])
    prob = np.array([0.5, 0.49999])
    *_, counts = binary_metrics(y, prob)
    assert counts.tp == 1 and counts.fp == 0


def test_binary_metrics_validation():
    with pytest.raises(ValidationError, match="binary"):
        binary_metrics(np.array([0.0, 2.0]), np.array([0.1, 0.2]))
    with pytest.raises(ValidationError, match="align"):
        binary_metrics(np.array([0.0, 1.0]), np.array([0.1]))
    with pytest.raises(ValidationError):
        binary_metrics(np.array([]), np.array([]))


# --- ranking ----------------------------------------------------------------


def test_perfect_and_inverted_ranking():
    y = np.array([0.0, 0.0, 1.0, 1.0])
    assert rank_auc(y, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0
    assert rank_auc(y, np.array([0.9, 0.8, 0.2, 0.1])) == 0.0


def test_constant_scores_are_chance():
    y = np.array([0.0, 1.0, 0.0, 1.0, 1.0])
    assert rank_auc(y, np.full(5, 0.5)) == 0.5


def test_rank_auc_matches_trapezoid_oracle():
    rng = np.random.default_rng(17)
    for trial in range(60):
        n = int(rng.integers(5, 200))
        y = rng.integers(0, 2, n).astype(np.float64)
        y[0], y[1] = 0.0, 1.0  # force both classes
        if trial % 3 == 0:
            scores = rng.integers(0, 4, n).astype(np.float64)  # heavy ties
        elif trial % 3 == 1:
            scores = rng.integers(0, 50, n).astype(np.float64)
        else:
            scores = rng.normal(size=n)
        assert abs(rank_auc(y, scores) - trapezoid_auc(y, scores)) <= 1e-9


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(21)
    y = rng.integers(0, 2, 300).astype(np.float64)
    y[:2] = [0.0, 1.0]
    prob = rng.random(300)
    log_odds = np.log(prob / (1.0 - prob))
    assert rank_auc(y, prob) == pytest.approx(rank_auc(y, log_odds), abs=1e-12)


def test_single_class_auc_raises():
    with pytest.raises(ValidationError, match="single-class"):
        rank_auc(np.ones(10), np.random.default_rng(0).random(10))


# --- evaluate and the ablation harness --------------------------------------


def small_forest(seed=5, n=400):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(0, 0.7, n) > 0).astype(np.float64)
    forest = train_gbdt(X, y, ("lambda", "momentum"),
                        TrainingConfig(n_rounds=20, max_depth=2))
    return forest, X, y


def test_evaluate_report_fields():
    forest, X, y = small_forest()
    report = evaluate(forest, X, y, stratum="Critical")
    assert report.stratum == "Critical"
    assert report.config_name == "l,m"
    assert report.n_test == y.size
    counts = report.counts
    assert counts.tp + counts.fp + counts.tn + counts.fn == y.size
    assert 0.5 < report.roc_auc <= 1.0


def test_evaluate_single_class_has_no_auc():
    forest, X, y = small_forest()
    keep = y == 1.0
    report = evaluate(forest, X[keep], y[keep])
    assert report.roc_auc is None
    assert report.recall > 0.0
    assert report.counts.tn == 0 and report.counts.fp == 0


def test_ablation_suite_order_and_determinism(burst_frame):
    label_set = fit_threshold_then_label(burst_frame)
    first = ablation_suite(burst_frame, label_set,
                           training=TrainingConfig(n_rounds=15, max_depth=2))
    second = ablation_suite(burst_frame, label_set,
                            training=TrainingConfig(n_rounds=15, max_depth=2))
    assert [r.config_name for r in first] == list(ABLATION_CONFIGS)
    assert all(r.stratum == burst_frame.stratum for r in first)
    for a, b in zip(first, second):
        assert a == b


def test_ablation_suite_single_config(burst_frame):
    label_set = fit_threshold_then_label(burst_frame)
    reports = ablation_suite(burst_frame, label_set, configs=("l,v",),
                             training=TrainingConfig(n_rounds=10, max_depth=2))
    assert len(reports) == 1
    assert reports[0].config_name == "l,v"
    with pytest.raises(ValidationError):
        ablation_suite(burst_frame, label_set, configs=())


def test_subset_name_roundtrip():
    assert subset_name(("lambda", "momentum", "volatility")) == "l,m,v"
    assert subset_name(("lambda",)) == "l"


# --- csv --------------------------------------------------------------------


def test_eval_csv_format(tmp_path):
    forest, X, y = small_forest()
    full = evaluate(forest, X, y, stratum="Major")
    keep = y == 1.0
    degenerate = evaluate(forest, X[keep], y[keep], stratum="Minor")
    path = tmp_path / "eval.csv"
    write_eval_csv([full, degenerate], path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "stratum,config,accuracy,auc,precision,recall,f1,tp,fp,tn,fn"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert len(first) == 11, "config cell must not contain raw commas"
    assert first[0] == "Major" and first[1] == "l+m"
    assert float(first[3]) == full.roc_auc
    assert lines[2].split(",")[3] == "NA"
    assert int(first[7]) == full.counts.tp
