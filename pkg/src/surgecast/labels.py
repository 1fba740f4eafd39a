"""Extreme-regime labels and the leakage-free chronological split.

A minute t is labeled positive when the intensity crosses the threshold
anywhere in the next h minutes:

    y(t) = 1{ max(lambda(t+1) .. lambda(t+h)) >= q }

q is the nearest-rank empirical quantile of the *training-region* unmasked
intensities, fitted once and held fixed. The last h minutes have no label.

The split drops s = floor(f*T) at the boundary and purges h minutes on each
side of it, so no training label's look-ahead window touches the test region:

    train = [0, s-h)    purged = [s-h, s+h)    test = [s+h, T)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import config as kv
from .errors import ValidationError
from .features import FeatureFrame


@dataclass(frozen=True)
class SplitPlan:
    train: tuple[int, int]
    purged: tuple[int, int]
    test: tuple[int, int]
    split_index: int
    horizon: int
    train_fraction: float


@dataclass
class RegimeLabelSet:
    """Labels plus everything needed to audit how they were produced."""

    labels: np.ndarray
    threshold: float
    quantile_level: float
    horizon: int
    plan: SplitPlan
    n_minutes: int
    stratum: str = ""

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.size != self.n_minutes - self.horizon:
            raise ValidationError("labels must cover exactly the first T - h minutes")


def empirical_quantile(values, level: float) -> float:
    """Nearest-rank quantile: sort ascending, take index ceil(level*n) - 1."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("values must be a non-empty 1-D array")
    if not np.isfinite(arr).all():
        raise ValidationError("values must be finite")
    if not 0.0 < level <= 1.0:
        raise ValidationError("level must be in (0, 1]")
    n = arr.size
    # the 1e-9 nudge keeps exact products like 0.95*40 from ceiling upward
    rank = int(math.ceil(level * n - 1e-9))
    rank = min(max(rank, 1), n)
    return float(np.sort(arr)[rank - 1])


def make_labels(lam, threshold: float, horizon: int) -> np.ndarray:
    """Horizon labels over a full intensity series; length T - horizon.

    Ties count as exceedance (>=). horizon = 1 recovers the single-step
    target y(t) = 1{lambda(t+1) >= q}.
    """
    x = np.asarray(lam, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("lam must be 1-D")
    h = int(horizon)
    if h < 1:
        raise ValidationError("horizon must be >= 1 (h = 0 is degenerate)")
    if x.size <= h:
        raise ValidationError(f"series of length {x.size} is too short for horizon {h}")
    future_max = sliding_window_view(x[1:], h).max(axis=1)
    return (future_max >= threshold).astype(np.int8)


def chronological_split(n_minutes: int, train_fraction: float = 0.7,
                        horizon: int = 30) -> SplitPlan:
    """Single chronological split with a 2h-wide purged buffer."""
    T = int(n_minutes)
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError("train_fraction must be in (0, 1)")
    h = int(horizon)
    if h < 0:
        raise ValidationError("horizon must be >= 0")
    s = int(math.floor(train_fraction * T + 1e-9))
    if s - h < 1:
        raise ValidationError(f"train region empty: T={T}, fraction={train_fraction}, h={h}")
    if s + h >= T:
        raise ValidationError(f"test region empty: T={T}, fraction={train_fraction}, h={h}")
    return SplitPlan(
        train=(0, s - h),
        purged=(s - h, s + h),
        test=(s + h, T),
        split_index=s,
        horizon=h,
        train_fraction=float(train_fraction),
    )


def fit_threshold_then_label(frame: FeatureFrame, quantile_level: float = 0.95,
                             horizon: int = 30,
                             train_fraction: float = 0.7) -> RegimeLabelSet:
    """Fit q on training-region unmasked intensities, then label everything.

    The threshold never sees the purged or test regions, and warm-up bins
    are excluded from the fit.
    """
    T = frame.n_bins
    plan = chronological_split(T, train_fraction, horizon)
    lo, hi = plan.train
    train_lam = frame.lam[lo:hi][~frame.warmup[lo:hi]]
    if train_lam.size == 0:
        raise ValidationError("training region is entirely warm-up; nothing to fit")
    q = empirical_quantile(train_lam, quantile_level)
    labels = make_labels(frame.lam, q, horizon)
    return RegimeLabelSet(
        labels=labels,
        threshold=q,
        quantile_level=float(quantile_level),
        horizon=int(horizon),
        plan=plan,
        n_minutes=T,
        stratum=frame.stratum,
    )


def train_rows(label_set: RegimeLabelSet, frame: FeatureFrame) -> np.ndarray:
    """Indices usable for training: train region, labeled, not warm-up."""
    lo, hi = label_set.plan.train
    idx = np.arange(lo, hi)
    return idx[~frame.warmup[lo:hi]]


def test_rows(label_set: RegimeLabelSet) -> np.ndarray:
    """Indices usable for evaluation: test region rows that carry a label."""
    lo, hi = label_set.plan.test
    hi = min(hi, label_set.n_minutes - label_set.horizon)
    if hi <= lo:
        raise ValidationError("no labeled rows in the test region")
    return np.arange(lo, hi)


def write_labels_csv(label_set: RegimeLabelSet, frame: FeatureFrame, path) -> None:
    plan = label_set.plan
    tr = set(train_rows(label_set, frame).tolist())
    lines = ["minute_index,label,in_train,in_test,purged"]
    for t in range(label_set.labels.size):
        in_train = int(t in tr)
        in_test = int(plan.test[0] <= t < plan.test[1])
        purged = int(plan.purged[0] <= t < plan.purged[1])
        lines.append(f"{t},{int(label_set.labels[t])},{in_train},{in_test},{purged}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_labels_meta(label_set: RegimeLabelSet, path) -> None:
    plan = label_set.plan
    kv.write_kv(path, {
        "stratum": label_set.stratum,
        "threshold": repr(float(label_set.threshold)),
        "quantile_level": repr(float(label_set.quantile_level)),
        "horizon": str(label_set.horizon),
        "train_fraction": repr(plan.train_fraction),
        "split_index": str(plan.split_index),
        "n_minutes": str(label_set.n_minutes),
        "train_start": str(plan.train[0]),
        "train_end": str(plan.train[1]),
        "purged_start": str(plan.purged[0]),
        "purged_end": str(plan.purged[1]),
        "test_start": str(plan.test[0]),
        "test_end": str(plan.test[1]),
    })


def read_labels_csv(path, meta_path) -> RegimeLabelSet:
    entries = kv.read_kv(meta_path)
    horizon = kv.kv_int(entries, "horizon")
    n_minutes = kv.kv_int(entries, "n_minutes")
    plan = SplitPlan(
        train=(kv.kv_int(entries, "train_start"), kv.kv_int(entries, "train_end")),
        purged=(kv.kv_int(entries, "purged_start"), kv.kv_int(entries, "purged_end")),
        test=(kv.kv_int(entries, "test_start"), kv.kv_int(entries, "test_end")),
        split_index=kv.kv_int(entries, "split_index"),
        horizon=horizon,
        train_fraction=kv.kv_float(entries, "train_fraction"),
    )
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("minute_index,label"):
        raise ValidationError(f"{path}: not a labels CSV")
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise ValidationError(f"{path}:{lineno}: expected 5 columns")
        if int(parts[0]) != lineno - 2:
            raise ValidationError(f"{path}:{lineno}: minute_index not contiguous")
        labels.append(int(parts[1]))
    return RegimeLabelSet(
        labels=np.asarray(labels, dtype=np.int8),
        threshold=kv.kv_float(entries, "threshold"),
        quantile_level=kv.kv_float(entries, "quantile_level"),
        horizon=horizon,
        plan=plan,
        n_minutes=n_minutes,
        stratum=kv.kv_str(entries, "stratum", ""),
    )
