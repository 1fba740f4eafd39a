"""Causal intensity features over a binned count series.

Three features per bin, all strictly backward-looking:

* intensity  lambda(t) = alpha*N(t) + (1-alpha)*lambda(t-1), lambda(0) = N(0)
* momentum   m(t) = (lambda(t) - lambda(t-1)) / (sigma_w(t) + eps), m(0) = 0
* volatility v(t) = population std of m over the trailing window [t-w+1, t]

sigma_w(t) is the population (1/w) standard deviation of lambda over the
trailing window [t-w+1, t], inclusive of t. Early indices use the partial
trailing window that exists; the warm-up mask (the first w+1 indices) tells
consumers to ignore them. Values are masked, never padded.

Two equivalent routes are provided. The composable vectorized ops
(ema_intensity, momentum, rolling_volatility) are the batch route;
``featurize``/``FeatureStream`` run a single-pass streaming kernel whose
state can be suspended and resumed, so truncating the input truncates the
output bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from .errors import ValidationError
from .ingest import BinnedSeries

FEATURE_NAMES: tuple[str, ...] = ("lambda", "momentum", "volatility")

#: Short CLI aliases for feature subsets, e.g. ``l,m,v``.
FEATURE_ALIASES: dict[str, str] = {"l": "lambda", "m": "momentum", "v": "volatility"}


def parse_feature_subset(spec: str) -> tuple[str, ...]:
    """Turn ``"l,m,v"`` (or full names) into a canonical-order name tuple."""
    chosen: set[str] = set()
    for token in spec.split(","):
        token = token.strip().lower()
        if not token:
            continue
        name = FEATURE_ALIASES.get(token, token)
        if name not in FEATURE_NAMES:
            raise ValidationError(f"unknown feature {token!r} (use l, m, v)")
        chosen.add(name)
    if "lambda" not in chosen:
        raise ValidationError("feature subset must include the intensity (l)")
    return tuple(name for name in FEATURE_NAMES if name in chosen)


@dataclass(frozen=True)
class FeatureConfig:
    alpha: float = 0.3
    window: int = 5
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError("alpha must be in (0, 1]")
        if int(self.window) != self.window or self.window < 2:
            raise ValidationError("window must be an integer >= 2")
        if self.epsilon <= 0.0:
            raise ValidationError("epsilon must be positive")

    def to_kv(self) -> dict[str, str]:
        return {
            "alpha": repr(float(self.alpha)),
            "window": str(int(self.window)),
            "epsilon": repr(float(self.epsilon)),
        }


@dataclass
class FeatureFrame:
    """Per-bin feature columns aligned with a BinnedSeries axis."""

    stratum: str
    origin: datetime
    bin_width_s: int
    lam: np.ndarray
    mom: np.ndarray
    vol: np.ndarray
    warmup: np.ndarray
    config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self) -> None:
        n = self.lam.size
        if not (self.mom.size == self.vol.size == self.warmup.size == n):
            raise ValidationError("feature columns must share one length")

    @property
    def n_bins(self) -> int:
        return int(self.lam.size)

    def column(self, name: str) -> np.ndarray:
        if name == "lambda":
            return self.lam
        if name == "momentum":
            return self.mom
        if name == "volatility":
            return self.vol
        raise ValidationError(f"unknown feature column {name!r}")

    def matrix(self, schema: tuple[str, ...]) -> np.ndarray:
        return np.column_stack([self.column(name) for name in schema])


def _as_float_counts(counts) -> np.ndarray:
    arr = np.asarray(counts, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValidationError("counts must be a non-empty 1-D array")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise ValidationError("counts must be finite and non-negative")
    return arr


def ema_intensity(counts, alpha: float = 0.3) -> np.ndarray:
    """Batch EMA recursion, seeded with the first count."""
    x = _as_float_counts(counts)
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("alpha must be in (0, 1]")
    # lfilter runs the exact recurrence y[t] = alpha*x[t] + (1-alpha)*y[t-1];
    # the initial state makes y[0] come out as x[0].
    zi = np.array([(1.0 - alpha) * x[0]])
    y, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], x, zi=zi)
    y[0] = x[0]
    return y


def _rolling_pop_std(x: np.ndarray, window: int) -> np.ndarray:
    """Population std over trailing windows, partial at the start."""
    n = x.size
    out = np.empty(n, dtype=np.float64)
    head = min(window - 1, n)
    for t in range(head):
        out[t] = np.std(x[: t + 1])
    if n >= window:
        win = sliding_window_view(x, window)
        out[window - 1 :] = np.std(win, axis=1)
    return out


def momentum(lam, window: int = 5, epsilon: float = 1e-6) -> np.ndarray:
    """Normalized first difference of the intensity; m(0) is 0 (masked)."""
    x = np.asarray(lam, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValidationError("lam must be a non-empty 1-D array")
    if window < 2:
        raise ValidationError("window must be >= 2")
    if epsilon <= 0.0:
        raise ValidationError("epsilon must be positive")
    sig = _rolling_pop_std(x, int(window))
    out = np.zeros(x.size, dtype=np.float64)
    out[1:] = (x[1:] - x[:-1]) / (sig[1:] + epsilon)
    return out


def rolling_volatility(mom, window: int = 5) -> np.ndarray:
    """Population std of momentum over the trailing window."""
    x = np.asarray(mom, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValidationError("mom must be a non-empty 1-D array")
    if window < 2:
        raise ValidationError("window must be >= 2")
    return _rolling_pop_std(x, int(window))


def warmup_mask(n: int, window: int) -> np.ndarray:
    """True for the first window+1 indices, where some window is partial."""
    return np.arange(n) < (window + 1)


@njit(cache=True)
def _stream_kernel(counts, alpha, window, epsilon, lam_ring, mom_ring, scalars,
                   out_lam, out_mom, out_vol):
    # scalars: [steps_done, prev_lambda]; rings are chronological mod window.
    t0 = int(scalars[0])
    prev = scalars[1]
    w = window
    for i in range(counts.shape[0]):
        t = t0 + i
        c = counts[i]
        if t == 0:
            lam = c
        else:
            lam = alpha * c + (1.0 - alpha) * prev
        lam_ring[t % w] = lam
        n_l = t + 1 if t + 1 < w else w
        base = t - n_l + 1
        s = 0.0
        for k in range(n_l):
            s += lam_ring[(base + k) % w]
        mean = s / n_l
        s2 = 0.0
        for k in range(n_l):
            d = lam_ring[(base + k) % w] - mean
            s2 += d * d
        sig = (s2 / n_l) ** 0.5
        if t == 0:
            m = 0.0
        else:
            m = (lam - prev) / (sig + epsilon)
        mom_ring[t % w] = m
        s = 0.0
        for k in range(n_l):
            s += mom_ring[(base + k) % w]
        mean = s / n_l
        s2 = 0.0
        for k in range(n_l):
            d = mom_ring[(base + k) % w] - mean
            s2 += d * d
        out_lam[i] = lam
        out_mom[i] = m
        out_vol[i] = (s2 / n_l) ** 0.5
        prev = lam
    scalars[0] = float(t0 + counts.shape[0])
    scalars[1] = prev


class FeatureStream:
    """Single-pass streaming feature engine with resumable state.

    Feeding a series one chunk (or one bin) at a time produces bit-identical
    output to one call over the whole series, which is what makes live
    scoring equal batch featurization.
    """

    def __init__(self, config: FeatureConfig | None = None):
        self.config = config or FeatureConfig()
        w = int(self.config.window)
        self._lam_ring = np.zeros(w, dtype=np.float64)
        self._mom_ring = np.zeros(w, dtype=np.float64)
        self._scalars = np.zeros(2, dtype=np.float64)

    @property
    def steps_done(self) -> int:
        return int(self._scalars[0])

    def push_many(self, counts) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Advance over a chunk of counts; returns (lam, mom, vol, warmup)."""
        x = _as_float_counts(counts)
        t0 = self.steps_done
        out_lam = np.empty(x.size, dtype=np.float64)
        out_mom = np.empty(x.size, dtype=np.float64)
        out_vol = np.empty(x.size, dtype=np.float64)
        _stream_kernel(
            x, float(self.config.alpha), int(self.config.window),
            float(self.config.epsilon), self._lam_ring, self._mom_ring,
            self._scalars, out_lam, out_mom, out_vol,
        )
        warm = np.arange(t0, t0 + x.size) < (int(self.config.window) + 1)
        return out_lam, out_mom, out_vol, warm

    def push(self, count: float) -> tuple[float, float, float, bool]:
        lam, mom_, vol, warm = self.push_many(np.array([count], dtype=np.float64))
        return float(lam[0]), float(mom_[0]), float(vol[0]), bool(warm[0])


def featurize(series: BinnedSeries, config: FeatureConfig | None = None) -> FeatureFrame:
    """Compute the full feature frame for a binned series in one pass."""
    config = config or FeatureConfig()
    stream = FeatureStream(config)
    lam, mom_, vol, warm = stream.push_many(series.counts)
    return FeatureFrame(
        stratum=series.stratum,
        origin=series.origin,
        bin_width_s=series.bin_width_s,
        lam=lam,
        mom=mom_,
        vol=vol,
        warmup=warm,
        config=config,
    )


def write_features_csv(frame: FeatureFrame, path) -> None:
    from pathlib import Path

    lines = ["minute_index,lambda,momentum,volatility,warmup"]
    for i in range(frame.n_bins):
        lines.append(
            f"{i},{float(frame.lam[i])!r},{float(frame.mom[i])!r},"
            f"{float(frame.vol[i])!r},{int(frame.warmup[i])}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_features_csv(path, stratum: str, origin: datetime | None = None,
                      bin_width_s: int = 60,
                      config: FeatureConfig | None = None) -> FeatureFrame:
    from pathlib import Path

    from .ingest import EPOCH

    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("minute_index,lambda"):
        raise ValidationError(f"{path}: not a feature CSV")
    lam, mom_, vol, warm = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise ValidationError(f"{path}:{lineno}: expected 5 columns")
        if int(parts[0]) != lineno - 2:
            raise ValidationError(f"{path}:{lineno}: minute_index not contiguous")
        lam.append(float(parts[1]))
        mom_.append(float(parts[2]))
        vol.append(float(parts[3]))
        warm.append(bool(int(parts[4])))
    return FeatureFrame(
        stratum=stratum,
        origin=origin if origin is not None else EPOCH,
        bin_width_s=bin_width_s,
        lam=np.asarray(lam, dtype=np.float64),
        mom=np.asarray(mom_, dtype=np.float64),
        vol=np.asarray(vol, dtype=np.float64),
        warmup=np.asarray(warm, dtype=bool),
        config=config or FeatureConfig(),
    )
