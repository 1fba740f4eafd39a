"""Shared fixtures: tiny alert streams and binned series used across suites."""

from datetime import datetime, timezone

import numpy as np
import pytest

from surgecast.features import FeatureConfig, FeatureFrame, featurize
from surgecast.ingest import BinnedSeries

UTC = timezone.utc
T0 = datetime(2025, 1, 6, tzinfo=UTC)


def poisson_series(n_bins: int, rate: float, seed: int,
                   stratum: str = "Critical") -> BinnedSeries:
    rng = np.random.default_rng(seed)
    counts = rng.poisson(rate, n_bins).astype(np.int64)
    return BinnedSeries(stratum=stratum, origin=T0, bin_width_s=60, counts=counts)


def bursty_series(n_bins: int = 600, seed: int = 0,
                  stratum: str = "Critical") -> BinnedSeries:
    """Baseline rate 3 with step surges, so labels carry both classes."""
    rng = np.random.default_rng(seed)
    rate = np.full(n_bins, 3.0)
    for start in range(80, n_bins - 60, 140):
        rate[start:start + 25] = 20.0
    counts = rng.poisson(rate).astype(np.int64)
    return BinnedSeries(stratum=stratum, origin=T0, bin_width_s=60, counts=counts)


@pytest.fixture()
def burst_frame() -> FeatureFrame:
    return featurize(bursty_series(), FeatureConfig())


def jsonl_line(ts: str, severity, **extra) -> str:
    import json

    record = {"timestamp": ts, "alert": {"severity": severity}}
    record.update(extra)
    return json.dumps(record)
