import numpy as np
import pytest

from surgecast.errors import ValidationError
from surgecast.features import (
    FeatureConfig,
    FeatureFrame,
    FeatureStream,
    ema_intensity,
    featurize,
    momentum,
    parse_feature_subset,
    read_features_csv,
    rolling_volatility,
    warmup_mask,
    write_features_csv,
)
from surgecast.ingest import BinnedSeries

from conftest import T0, poisson_series


def series(counts) -> BinnedSeries:
    return BinnedSeries("Critical", T0, 60, np.asarray(counts, dtype=np.int64))


def brute_features(counts, alpha=0.3, window=5, epsilon=1e-6):
    """Independent loop-and-slice oracle for all three features."""
    counts = np.asarray(counts, dtype=np.float64)
    T = counts.size
    lam = np.empty(T)
    lam[0] = counts[0]
    for t in range(1, T):
        lam[t] = alpha * counts[t] + (1 - alpha) * lam[t - 1]
    mom = np.zeros(T)
    for t in range(1, T):
        w = lam[max(0, t - window + 1):t + 1]
        mom[t] = (lam[t] - lam[t - 1]) / (w.std() + epsilon)
    vol = np.zeros(T)
    for t in range(T):
        w = mom[max(0, t - window + 1):t + 1]
        vol[t] = w.std()
    return lam, mom, vol


# --- EMA intensity ----------------------------------------------------------


def test_ema_fixed_point():
    assert ema_intensity([10, 10, 10], 0.3).tolist() == [10.0, 10.0, 10.0]


def test_ema_one_step():
    lam = ema_intensity([0, 10], 0.3)
    assert lam.tolist() == [0.0, 3.0]


def test_ema_matches_recursion_oracle():
    rng = np.random.default_rng(11)
    counts = rng.poisson(4.0, 10_000)
    lam = ema_intensity(counts, 0.3)
    expected, _, _ = brute_features(counts)
    np.testing.assert_allclose(lam, expected, rtol=1e-12)


def test_ema_alpha_bounds():
    with pytest.raises(ValidationError):
        ema_intensity([1, 2], 0.0)
    with pytest.raises(ValidationError):
        ema_intensity([1, 2], 1.5)


# --- momentum ---------------------------------------------------------------


def test_momentum_hand_value():
    lam = np.array([5.0, 5.0, 5.0, 5.0, 5.0, 8.0])
    m = momentum(lam, window=5, epsilon=1e-6)
    # trailing window [5,5,5,5,8]: population sigma = 1.2
    assert m[5] == pytest.approx(3.0 / (1.2 + 1e-6), abs=1e-12)
    assert m[5] == pytest.approx(2.499998, abs=1e-6)


def test_momentum_constant_series_is_zero():
    m = momentum(np.full(50, 7.0), window=5, epsilon=1e-6)
    assert np.all(m == 0.0)


def test_momentum_increasing_series_is_positive():
    m = momentum(np.arange(1.0, 50.0), window=5, epsilon=1e-6)
    assert np.all(m[1:] > 0.0)


def test_momentum_first_index_zero():
    m = momentum(np.array([3.0, 9.0]), window=5, epsilon=1e-6)
    assert m[0] == 0.0


# --- rolling volatility -----------------------------------------------------


def test_volatility_hand_value():
    m = np.array([0.0, 0.0, 0.0, 0.0, 2.0])
    v = rolling_volatility(m, window=5)
    # mean 0.4 -> sqrt((4*0.16 + 2.56)/5) = 0.8
    assert v[4] == pytest.approx(0.8, abs=1e-12)


def test_volatility_constant_momentum_is_zero():
    assert np.all(rolling_volatility(np.full(20, 1.5), 5) == 0.0)


def test_volatility_shift_invariance():
    rng = np.random.default_rng(5)
    m = rng.normal(size=200)
    np.testing.assert_allclose(
        rolling_volatility(m, 5), rolling_volatility(m + 13.7, 5), atol=1e-9
    )


def test_volatility_nonnegative():
    rng = np.random.default_rng(6)
    v = rolling_volatility(rng.normal(size=500), 5)
    assert np.all(v >= 0.0)


# --- featurize --------------------------------------------------------------


def test_featurize_matches_brute_oracle():
    rng = np.random.default_rng(21)
    counts = rng.poisson(6.0, 3000)
    frame = featurize(series(counts))
    lam, mom, vol = brute_features(counts)
    np.testing.assert_allclose(frame.lam, lam, atol=1e-9)
    np.testing.assert_allclose(frame.mom, mom, atol=1e-9)
    np.testing.assert_allclose(frame.vol, vol, atol=1e-9)


def test_featurize_short_series_fully_masked():
    frame = featurize(series([1, 2, 3]), FeatureConfig(window=5))
    assert frame.warmup.all()


def test_warmup_mask_is_first_window_plus_one():
    mask = warmup_mask(10, 5)
    assert mask.tolist() == [True] * 6 + [False] * 4


def test_featurize_prefix_causality():
    rng = np.random.default_rng(8)
    counts = rng.poisson(5.0, 400)
    full = featurize(series(counts))
    for cut in (1, 7, 100, 399):
        part = featurize(series(counts[:cut]))
        assert np.array_equal(part.lam, full.lam[:cut])
        assert np.array_equal(part.mom, full.mom[:cut])
        assert np.array_equal(part.vol, full.vol[:cut])


def test_streaming_equals_batch_exactly():
    rng = np.random.default_rng(9)
    counts = rng.poisson(5.0, 100_000)
    frame = featurize(series(counts))
    stream = FeatureStream(FeatureConfig())
    lam, mom, vol, warm = stream.push_many(counts.astype(np.float64))
    assert np.array_equal(lam, frame.lam)
    assert np.array_equal(mom, frame.mom)
    assert np.array_equal(vol, frame.vol)
    assert np.array_equal(warm, frame.warmup)


def test_streaming_chunked_equals_batch():
    rng = np.random.default_rng(10)
    counts = rng.poisson(5.0, 997).astype(np.float64)
    frame = featurize(series(counts.astype(np.int64)))
    stream = FeatureStream(FeatureConfig())
    parts = []
    for start in range(0, counts.size, 13):
        parts.append(stream.push_many(counts[start:start + 13]))
    lam = np.concatenate([p[0] for p in parts])
    assert np.array_equal(lam, frame.lam)
    assert stream.steps_done == counts.size


def test_stream_one_bin_at_a_time():
    counts = [0.0, 10.0, 4.0, 4.0, 4.0, 4.0, 9.0]
    frame = featurize(series(np.asarray(counts, dtype=np.int64)))
    stream = FeatureStream(FeatureConfig())
    for i, c in enumerate(counts):
        lam, mom, vol, warm = stream.push(c)
        assert lam == frame.lam[i]
        assert mom == frame.mom[i]
        assert vol == frame.vol[i]
        assert warm == frame.warmup[i]


def test_scale_covariance():
    rng = np.random.default_rng(12)
    counts = rng.poisson(20.0, 500)
    base = featurize(series(counts))
    scaled = featurize(series(counts * 50))
    np.testing.assert_allclose(scaled.lam, base.lam * 50, rtol=1e-9)
    # momentum sign is preserved wherever sigma dominates epsilon
    sig_big = base.vol > 1e-3
    idx = ~base.warmup & sig_big & (np.abs(base.mom) > 1e-6)
    assert np.array_equal(np.sign(scaled.mom[idx]), np.sign(base.mom[idx]))


def test_feature_config_validation():
    for bad in (dict(alpha=0.0), dict(alpha=1.2), dict(window=1),
                dict(window=2.5), dict(epsilon=0.0)):
        with pytest.raises(ValidationError):
            FeatureConfig(**bad)


def test_parse_feature_subset():
    assert parse_feature_subset("l,m,v") == ("lambda", "momentum", "volatility")
    assert parse_feature_subset("l") == ("lambda",)
    assert parse_feature_subset("lambda, volatility") == ("lambda", "volatility")
    with pytest.raises(ValidationError):
        parse_feature_subset("m,v")  # intensity is the anchor feature
    with pytest.raises(ValidationError):
        parse_feature_subset("l,x")


def test_frame_matrix_and_column():
    frame = featurize(poisson_series(50, 4.0, seed=1))
    X = frame.matrix(("lambda", "volatility"))
    assert X.shape == (50, 2)
    assert np.array_equal(X[:, 1], frame.vol)
    with pytest.raises(ValidationError):
        frame.column("entropy")


def test_features_csv_roundtrip(tmp_path):
    frame = featurize(poisson_series(80, 4.0, seed=2))
    path = tmp_path / "features_Critical.csv"
    write_features_csv(frame, path)
    back = read_features_csv(path, "Critical", origin=frame.origin,
                             bin_width_s=60, config=frame.config)
    assert np.array_equal(back.lam, frame.lam)
    assert np.array_equal(back.mom, frame.mom)
    assert np.array_equal(back.vol, frame.vol)
    assert np.array_equal(back.warmup, frame.warmup)
    header = path.read_text().splitlines()[0]
    assert header == "minute_index,lambda,momentum,volatility,warmup"
