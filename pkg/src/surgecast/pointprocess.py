"""Temporal point-process models for alert arrival times.

Three model families over event times measured in minutes on [0, duration):

* HPP     constant rate mu; closed-form MLE mu = n/duration
* NHPP    diurnal sinusoid rate(t) = mean*(1 + rho*sin(2*pi*(t-phase)/period))
* Hawkes  self-exciting, exponential kernel
          lambda*(t) = mu + sum_{t_i < t} alpha * exp(-beta*(t - t_i))

Hawkes log-likelihood and compensator use the exact O(n) recursion
R_i = exp(-beta*dt_i) * (R_{i-1} + 1); fitting is multi-start bounded
L-BFGS-B with analytic gradients, reparameterized through the branching
ratio r = alpha/beta < 1 so fitted processes are always stable.

Goodness of fit is the time-rescaling theorem: compensator increments
between consecutive events are unit-rate exponential under the correct
model, tested with a one-sample KS test.

The scenario generator at the bottom produces multi-stratum synthetic alert
streams (diurnal NHPP baseline plus ramped Hawkes surge episodes) with
ground-truth surge intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.optimize import minimize
from scipy.stats import kstest

from . import config as kv
from .errors import ConvergenceError, ValidationError
from .ingest import EPOCH, STRATUM_ORDER, epoch_ms, iso_utc

DAY_MIN = 1440.0


@dataclass(frozen=True)
class PoissonParams:
    mu: float

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValidationError("mu must be positive")


@dataclass(frozen=True)
class NhppParams:
    """Sinusoid-plus-mean rate; amplitude is relative (rho in [0, 1))."""

    mean_rate: float
    amplitude: float
    phase_min: float
    period_min: float = DAY_MIN

    def __post_init__(self) -> None:
        if self.mean_rate <= 0:
            raise ValidationError("mean_rate must be positive")
        if not 0.0 <= self.amplitude < 1.0:
            raise ValidationError("amplitude must be in [0, 1) to keep the rate positive")
        if self.period_min <= 0:
            raise ValidationError("period_min must be positive")

    def rate(self, t) -> np.ndarray:
        omega = 2.0 * math.pi / self.period_min
        return self.mean_rate * (1.0 + self.amplitude * np.sin(omega * (np.asarray(t) - self.phase_min)))


@dataclass(frozen=True)
class HawkesParams:
    mu: float
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.beta <= 0 or self.alpha < 0:
            raise ValidationError("require mu > 0, beta > 0, alpha >= 0")

    @property
    def branching_ratio(self) -> float:
        return self.alpha / self.beta

    @property
    def stable(self) -> bool:
        return self.branching_ratio < 1.0


@dataclass
class FitReport:
    model: str
    params: PoissonParams | NhppParams | HawkesParams
    loglik: float
    aic: float
    n_events: int
    converged: bool
    ks_stat: float | None = None
    ks_p: float | None = None


def _check_events(times, duration: float) -> np.ndarray:
    arr = np.asarray(times, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError("event times must be 1-D")
    if duration <= 0:
        raise ValidationError("duration must be positive")
    if arr.size and ((arr < 0).any() or (arr > duration).any()):
        raise ValidationError("event times must lie in [0, duration]")
    if arr.size > 1 and (np.diff(arr) < 0).any():
        raise ValidationError("event times must be sorted")
    return arr


# --- simulation ---------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def simulate_hpp(mu: float, duration: float, seed) -> np.ndarray:
    """Homogeneous Poisson stream via exponential inter-arrivals."""
    if mu < 0 or duration <= 0:
        raise ValidationError("require mu >= 0 and duration > 0")
    if mu == 0:
        return np.empty(0, dtype=np.float64)
    rng = _rng(seed)
    out: list[np.ndarray] = []
    t = 0.0
    block = max(64, int(mu * duration + 6.0 * math.sqrt(mu * duration) + 64))
    while True:
        gaps = rng.exponential(1.0 / mu, block)
        times = t + np.cumsum(gaps)
        if times[-1] >= duration:
            out.append(times[times < duration])
            break
        out.append(times)
        t = float(times[-1])
        block = max(64, block // 4)
    return np.concatenate(out)


def simulate_nhpp(params: NhppParams, duration: float, seed) -> np.ndarray:
    """Inhomogeneous Poisson stream by thinning against the rate maximum."""
    if duration <= 0:
        raise ValidationError("duration must be positive")
    rng = _rng(seed)
    bound = params.mean_rate * (1.0 + params.amplitude)
    n_cand = rng.poisson(bound * duration)
    times = np.sort(rng.uniform(0.0, duration, n_cand))
    keep = rng.random(n_cand) * bound < params.rate(times)
    return times[keep]


def simulate_hawkes(params: HawkesParams, duration: float, seed) -> np.ndarray:
    """Exact simulation by Ogata's modified thinning algorithm."""
    if not params.stable:
        raise ValidationError(
            f"unstable parameters: branching ratio {params.branching_ratio:.3f} >= 1"
        )
    if duration <= 0:
        raise ValidationError("duration must be positive")
    rng = _rng(seed)
    mu, alpha, beta = params.mu, params.alpha, params.beta
    events: list[float] = []
    t = 0.0
    excite = 0.0  # sum of exp(-beta*(t - t_i)) over past events
    while True:
        lam_bar = mu + alpha * excite
        t_new = t + rng.exponential(1.0 / lam_bar)
        if t_new >= duration:
            break
        excite *= math.exp(-beta * (t_new - t))
        t = t_new
        if rng.random() * lam_bar <= mu + alpha * excite:
            events.append(t)
            excite += 1.0
    return np.asarray(events, dtype=np.float64)


# --- likelihoods and compensators ---------------------------------------


@njit(cache=True)
def _hawkes_loglik_grad(times, mu, alpha, beta, duration):
    """Exact log-likelihood and gradient via the R/Q recursions."""
    n = times.shape[0]
    ll = math.log(mu)
    dmu = 1.0 / mu
    dal = 0.0
    dbe = 0.0
    R = 0.0
    Q = 0.0
    for i in range(1, n):
        dt = times[i] - times[i - 1]
        e = math.exp(-beta * dt)
        Q = e * (Q + dt * (R + 1.0))
        R = e * (R + 1.0)
        lam = mu + alpha * R
        ll += math.log(lam)
        dmu += 1.0 / lam
        dal += R / lam
        dbe -= alpha * Q / lam
    s1 = 0.0
    s2 = 0.0
    for i in range(n):
        tau = duration - times[i]
        e = math.exp(-beta * tau)
        s1 += 1.0 - e
        s2 += tau * e
    ll -= mu * duration + (alpha / beta) * s1
    dmu -= duration
    dal -= s1 / beta
    dbe += (alpha / beta ** 2) * s1 - (alpha / beta) * s2
    return ll, dmu, dal, dbe


@njit(cache=True)
def _hawkes_compensator(times, mu, alpha, beta):
    """Integrated intensity at each event time."""
    n = times.shape[0]
    out = np.empty(n, dtype=np.float64)
    R = 0.0
    for i in range(n):
        if i > 0:
            R = math.exp(-beta * (times[i] - times[i - 1])) * (R + 1.0)
        # sum over k < i of (1 - exp(-beta*(t_i - t_k))) equals i - R
        out[i] = mu * times[i] + (alpha / beta) * (i - R)
    return out


def hawkes_loglik(times, params: HawkesParams, duration: float) -> float:
    arr = _check_events(times, duration)
    if arr.size == 0:
        raise ValidationError("need at least one event")
    ll, _, _, _ = _hawkes_loglik_grad(arr, params.mu, params.alpha, params.beta, float(duration))
    return float(ll)


def hpp_loglik(times, params: PoissonParams, duration: float) -> float:
    arr = _check_events(times, duration)
    return float(arr.size * math.log(params.mu) - params.mu * duration)


def _nhpp_integral(params: NhppParams, t: float) -> float:
    omega = 2.0 * math.pi / params.period_min
    osc = (math.cos(omega * params.phase_min) - math.cos(omega * (t - params.phase_min))) / omega
    return params.mean_rate * (t + params.amplitude * osc)


def nhpp_loglik(times, params: NhppParams, duration: float) -> float:
    arr = _check_events(times, duration)
    if arr.size == 0:
        raise ValidationError("need at least one event")
    rates = params.rate(arr)
    if (rates <= 0).any():
        raise ValidationError("rate must stay positive over all events")
    return float(np.log(rates).sum() - _nhpp_integral(params, float(duration)))


def compensator(params, times, duration: float | None = None) -> np.ndarray:
    """Integrated intensity evaluated at each event time."""
    arr = np.asarray(times, dtype=np.float64)
    if isinstance(params, PoissonParams):
        return params.mu * arr
    if isinstance(params, NhppParams):
        omega = 2.0 * math.pi / params.period_min
        osc = (np.cos(omega * params.phase_min) - np.cos(omega * (arr - params.phase_min))) / omega
        return params.mean_rate * (arr + params.amplitude * osc)
    if isinstance(params, HawkesParams):
        return _hawkes_compensator(arr, params.mu, params.alpha, params.beta)
    raise ValidationError(f"unsupported params type {type(params).__name__}")


# --- fitting -------------------------------------------------------------


def fit_hpp(times, duration: float) -> FitReport:
    arr = _check_events(times, duration)
    if arr.size == 0:
        raise ValidationError("cannot fit a rate to zero events")
    mu = arr.size / float(duration)
    ll = hpp_loglik(arr, PoissonParams(mu), duration)
    return FitReport(
        model="hpp", params=PoissonParams(mu), loglik=ll,
        aic=2.0 * 1 - 2.0 * ll, n_events=int(arr.size), converged=True,
    )


_REL_TOL = 1e-8


def fit_hawkes(times, duration: float, seed: int = 0, n_starts: int = 6,
               fixed_beta: float | None = None) -> FitReport:
    """Multi-start bounded MLE in (mu, branching ratio, beta) space.

    With fixed_beta the kernel timescale is pinned and only (mu, ratio) are
    free, so the AIC penalty counts two parameters instead of three.
    """
    arr = _check_events(times, duration)
    if arr.size < 5:
        raise ValidationError("need at least 5 events to fit a Hawkes model")
    if fixed_beta is not None and not fixed_beta > 0:
        raise ValidationError("fixed_beta must be positive")
    duration = float(duration)
    rate = arr.size / duration
    mean_gap = duration / arr.size
    rng = _rng(seed)

    if fixed_beta is None:
        def objective(x):
            mu, r, beta = x
            ll, dmu, dal, dbe = _hawkes_loglik_grad(arr, mu, r * beta, beta, duration)
            # chain rule through alpha = r * beta
            return -ll, -np.array([dmu, dal * beta, dal * r + dbe])

        bounds = [(1e-10, 50.0 * rate), (1e-9, 0.995), (1e-6, 1e4)]
        starts = [
            (rate * (1.0 - r0), r0, b0 / mean_gap)
            for r0 in (0.2, 0.5, 0.8)
            for b0 in (1.0, 0.3)
        ]
        while len(starts) < n_starts:
            starts.append((
                rate * rng.uniform(0.2, 1.0),
                rng.uniform(0.05, 0.9),
                rng.uniform(0.2, 3.0) / mean_gap,
            ))
        n_free = 3
    else:
        beta0 = float(fixed_beta)

        def objective(x):
            mu, r = x
            ll, dmu, dal, _ = _hawkes_loglik_grad(arr, mu, r * beta0, beta0, duration)
            return -ll, -np.array([dmu, dal * beta0])

        bounds = [(1e-10, 50.0 * rate), (1e-9, 0.995)]
        starts = [(rate * (1.0 - r0), r0) for r0 in (0.1, 0.3, 0.5, 0.8)]
        while len(starts) < n_starts:
            starts.append((rate * rng.uniform(0.2, 1.0), rng.uniform(0.05, 0.9)))
        n_free = 2

    best_x = None
    best_ll = -np.inf
    any_ok = False
    for x0 in starts[:max(n_starts, len(starts))]:
        res = minimize(
            objective, np.asarray(x0), jac=True, method="L-BFGS-B",
            bounds=bounds, options={"ftol": _REL_TOL, "gtol": 1e-7, "maxiter": 500},
        )
        if not np.isfinite(res.fun):
            continue
        if -res.fun > best_ll:
            best_ll = -res.fun
            best_x = res.x
        any_ok = any_ok or bool(res.success)
    if best_x is None:
        raise ConvergenceError("all Hawkes starts diverged", best=None)
    if fixed_beta is None:
        mu, r, beta = best_x
    else:
        (mu, r), beta = best_x, float(fixed_beta)
    params = HawkesParams(mu=float(mu), alpha=float(r * beta), beta=float(beta))
    report = FitReport(
        model="hawkes", params=params, loglik=float(best_ll),
        aic=2.0 * n_free - 2.0 * float(best_ll), n_events=int(arr.size),
        converged=any_ok,
    )
    if not any_ok:
        raise ConvergenceError("no Hawkes start converged", best=report)
    return report


def fit_nhpp(times, duration: float, period_min: float = DAY_MIN,
             seed: int = 0, n_starts: int = 6) -> FitReport:
    """Sinusoid NHPP MLE over (mean, relative amplitude, phase)."""
    arr = _check_events(times, duration)
    if arr.size == 0:
        raise ValidationError("cannot fit a rate to zero events")
    duration = float(duration)
    rate = arr.size / duration
    omega = 2.0 * math.pi / period_min

    def negloglik(x):
        mean, rho, phase = x
        vals = 1.0 + rho * np.sin(omega * (arr - phase))
        if (vals <= 1e-12).any() or mean <= 0:
            return 1e300
        osc = (math.cos(omega * phase) - math.cos(omega * (duration - phase))) / omega
        return -(arr.size * math.log(mean) + np.log(vals).sum()
                 - mean * (duration + rho * osc))

    bounds = [(1e-10, 50.0 * rate), (0.0, 0.995), (0.0, period_min)]
    starts = [(rate, 0.3, frac * period_min) for frac in (0.0, 0.25, 0.5, 0.75)]
    starts.append((rate, 0.05, 0.0))
    rng = _rng(seed)
    while len(starts) < n_starts:
        starts.append((rate, rng.uniform(0.05, 0.9), rng.uniform(0.0, period_min)))
    best_x = None
    best_ll = -np.inf
    any_ok = False
    for x0 in starts[:max(n_starts, 5)]:
        res = minimize(
            negloglik, np.asarray(x0), method="L-BFGS-B", bounds=bounds,
            options={"ftol": _REL_TOL, "maxiter": 500},
        )
        if not np.isfinite(res.fun):
            continue
        if -res.fun > best_ll:
            best_ll = -res.fun
            best_x = res.x
        any_ok = any_ok or bool(res.success)
    if best_x is None:
        raise ConvergenceError("all NHPP starts diverged", best=None)
    params = NhppParams(
        mean_rate=float(best_x[0]), amplitude=float(best_x[1]),
        phase_min=float(best_x[2]), period_min=float(period_min),
    )
    report = FitReport(
        model="nhpp", params=params, loglik=float(best_ll),
        aic=2.0 * 3 - 2.0 * float(best_ll), n_events=int(arr.size), converged=any_ok,
    )
    if not any_ok:
        raise ConvergenceError("no NHPP start converged", best=report)
    return report


def fit_mle(times, duration: float, model: str = "hawkes",
            seed: int = 0, n_starts: int = 6) -> FitReport:
    if model == "hpp":
        return fit_hpp(times, duration)
    if model == "nhpp":
        return fit_nhpp(times, duration, seed=seed, n_starts=n_starts)
    if model == "hawkes":
        return fit_hawkes(times, duration, seed=seed, n_starts=n_starts)
    raise ValidationError(f"unknown model {model!r} (expected hpp, nhpp, or hawkes)")


# --- goodness of fit ------------------------------------------------------


def time_rescaling_ks(times, params, duration: float | None = None) -> tuple[float, float]:
    """KS test of rescaled inter-arrivals against Exp(1).

    Under the correct model the compensator increments between consecutive
    events (including from time 0 to the first) are iid unit-rate
    exponential. Requires at least 20 events.
    """
    arr = np.asarray(times, dtype=np.float64)
    if arr.size < 20:
        raise ValidationError(f"need at least 20 events for the KS test, got {arr.size}")
    big_lambda = compensator(params, arr, duration)
    taus = np.diff(np.concatenate(([0.0], big_lambda)))
    if (taus < 0).any():
        raise ValidationError("compensator must be non-decreasing")
    result = kstest(taus, "expon")
    return float(result.statistic), float(result.pvalue)


def with_ks(report: FitReport, times, duration: float | None = None) -> FitReport:
    stat, p = time_rescaling_ks(times, report.params, duration)
    return replace(report, ks_stat=stat, ks_p=p)


# --- multiscale aggregation study ----------------------------------------


def rebin_events(times, duration: float, width_min: float) -> np.ndarray:
    """Bin events at the given width, then spread each bin's count evenly.

    k events in a bin of width b are reconstructed at offsets (j+0.5)*b/k,
    deterministically, so refits across scales are reproducible.
    """
    arr = _check_events(times, duration)
    if width_min <= 0:
        raise ValidationError("width_min must be positive")
    if arr.size == 0:
        return arr
    n_bins = int(math.ceil(duration / width_min))
    idx = np.minimum((arr / width_min).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    nz = np.flatnonzero(counts)
    reps = counts[nz]
    bin_of_event = np.repeat(nz, reps)
    offsets = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    per_event_count = np.repeat(reps, reps)
    lo = bin_of_event * width_min
    # the final bin may be cut short by duration; spread within what remains
    widths = np.minimum(width_min, duration - lo)
    return lo + (offsets + 0.5) / per_event_count * widths


@dataclass
class ScaleFit:
    model: str
    window_min: float
    report: FitReport


def multiscale_study(times, duration: float, windows: Sequence[float],
                     seed: int = 0,
                     models: tuple[str, ...] = ("hawkes", "nhpp")) -> list[ScaleFit]:
    """Refit models on evenly-spread rebinned events at each window width.

    The Hawkes kernel timescale is estimated once at the finest window and
    held fixed everywhere else. Refitting it per window lets the kernel
    stretch to the bin width, which reports a near-constant branching ratio
    at every scale (count overdispersion survives binning); with the
    timescale pinned, the branching ratio measures how much of the
    finest-scale excitation is still visible after coarser aggregation.
    """
    arr = _check_events(times, duration)
    if not windows:
        raise ValidationError("need at least one window width")
    widths = [float(w) for w in windows]
    ref_beta = None
    if "hawkes" in models:
        finest = rebin_events(arr, duration, min(widths))
        ref_beta = fit_hawkes(finest, duration, seed=seed).params.beta
    rows: list[ScaleFit] = []
    for width in widths:
        recon = rebin_events(arr, duration, width)
        for model in models:
            if model == "hawkes":
                report = fit_hawkes(recon, duration, seed=seed, fixed_beta=ref_beta)
            else:
                report = fit_mle(recon, duration, model=model, seed=seed)
            try:
                report = with_ks(report, recon, duration)
            except ValidationError:
                pass  # fewer than 20 events: leave ks fields empty
            rows.append(ScaleFit(model=model, window_min=width, report=report))
    return rows


def write_scalefits_csv(rows: Iterable[ScaleFit], path) -> None:
    lines = ["model,window_min,loglik,aic,ks_stat,ks_p"]
    for row in rows:
        r = row.report
        ks_stat = "" if r.ks_stat is None else repr(float(r.ks_stat))
        ks_p = "" if r.ks_p is None else repr(float(r.ks_p))
        lines.append(
            f"{row.model},{float(row.window_min)!r},{float(r.loglik)!r},"
            f"{float(r.aic)!r},{ks_stat},{ks_p}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- synthetic scenario generator -----------------------------------------


@dataclass(frozen=True)
class StratumScenario:
    """Per-stratum generator settings.

    A surge episode plays out in stages: a reconnaissance trickle at
    surge_precursor_level * surge_rate for surge_precursor_min, a linear
    climb to surge_rate over surge_ramp_min, a sustained flood, then a dead
    stop at surge_len_min (storms get quelled, they do not taper).

    Episodes occupy the schedule for surge_len_min after an exponential gap
    with mean 1440/surges_per_day, so the long-run episode rate is
    1440 / (1440/surges_per_day + surge_len_min) per day; each contributes
    immigrant-shape area / (1 - surge_branching) events.
    """

    base_rate: float
    diurnal_amplitude: float = 0.45
    diurnal_peak_min: float = 960.0
    surges_per_day: float = 2.0
    surge_rate: float = 0.0
    surge_branching: float = 0.5
    surge_beta: float = 1.2
    surge_len_min: float = 40.0
    surge_ramp_min: float = 10.0
    surge_precursor_min: float = 0.0
    surge_precursor_level: float = 0.0

    def __post_init__(self) -> None:
        if self.base_rate <= 0:
            raise ValidationError("base_rate must be positive")
        if not 0.0 <= self.diurnal_amplitude < 1.0:
            raise ValidationError("diurnal_amplitude must be in [0, 1)")
        if self.surges_per_day < 0 or self.surge_rate < 0:
            raise ValidationError("surge settings must be non-negative")
        if not 0.0 <= self.surge_branching < 1.0:
            raise ValidationError("surge_branching must be in [0, 1)")
        if self.surge_len_min <= 0 or self.surge_beta <= 0:
            raise ValidationError("surge_len_min and surge_beta must be positive")
        if self.surge_ramp_min < 0 or self.surge_precursor_min < 0:
            raise ValidationError("surge stage lengths must be non-negative")
        if self.surge_precursor_min + self.surge_ramp_min > self.surge_len_min:
            raise ValidationError(
                "precursor plus ramp must fit inside surge_len_min"
            )
        if not 0.0 <= self.surge_precursor_level <= 1.0:
            raise ValidationError("surge_precursor_level must be in [0, 1]")


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_min: float
    start: datetime
    strata: dict[str, StratumScenario]

    def __post_init__(self) -> None:
        if self.duration_min <= 0:
            raise ValidationError("duration_min must be positive")
        if not self.strata:
            raise ValidationError("scenario needs at least one stratum")
        for name in self.strata:
            if name not in STRATUM_ORDER:
                raise ValidationError(f"unknown stratum {name!r}")


@dataclass(frozen=True)
class SurgeInterval:
    stratum: str
    start_min: float
    end_min: float


_SURGE_LEN = 55.0
_SURGE_RAMP = 25.0
_SURGE_PRECURSOR = 15.0
_SURGE_PRECURSOR_LEVEL = 0.3
_SURGE_BRANCHING = 0.3
_SURGE_RATIO = 8.0  # immigrant peak as a multiple of the baseline rate


def _block(target_mean: float, peak_min: float,
           surges_per_day: float = 3.6) -> StratumScenario:
    # Calibrated so the long-run mean comes out at target_mean: episodes run
    # at rate 1440/(1440/spd + L) per day and each contributes
    # A * (level*pre + (1+level)/2*ramp + plateau) / (1-r) events.
    ep_per_day = DAY_MIN / (DAY_MIN / surges_per_day + _SURGE_LEN)
    area = (_SURGE_PRECURSOR_LEVEL * _SURGE_PRECURSOR
            + (1.0 + _SURGE_PRECURSOR_LEVEL) / 2.0 * _SURGE_RAMP
            + (_SURGE_LEN - _SURGE_PRECURSOR - _SURGE_RAMP))
    per_unit_a = ep_per_day * area / ((1.0 - _SURGE_BRANCHING) * DAY_MIN)
    base = target_mean / (1.0 + per_unit_a * _SURGE_RATIO)
    return StratumScenario(
        base_rate=base,
        diurnal_amplitude=0.2,
        diurnal_peak_min=peak_min,
        surges_per_day=surges_per_day,
        surge_rate=_SURGE_RATIO * base,
        surge_branching=_SURGE_BRANCHING,
        surge_beta=1.2,
        surge_len_min=_SURGE_LEN,
        surge_ramp_min=_SURGE_RAMP,
        surge_precursor_min=_SURGE_PRECURSOR,
        surge_precursor_level=_SURGE_PRECURSOR_LEVEL,
    )


def default_scenario() -> Scenario:
    """60 days, five strata; Critical calibrated to a 5.64/min long-run mean.

    Non-critical mean rates are desk-scale (1/200 of production-scale
    magnitudes) while preserving their ordering.
    """
    return Scenario(
        name="default",
        duration_min=60 * DAY_MIN,
        start=datetime(2025, 1, 6, tzinfo=timezone.utc),
        strata={
            "Critical": _block(5.64, 960.0),
            "Major": _block(2.45, 930.0),
            "Minor": _block(2.89, 945.0),
            "Informational": _block(6.53, 900.0),
            "Unknown": _block(10.41, 915.0),
        },
    )


def smoke_scenario() -> Scenario:
    """Small 3-day scenario for fast end-to-end runs and determinism checks."""
    return Scenario(
        name="smoke",
        duration_min=3 * DAY_MIN,
        start=datetime(2025, 1, 6, tzinfo=timezone.utc),
        strata={
            "Critical": _block(4.0, 960.0),
            "Major": _block(3.0, 930.0),
            "Minor": _block(3.5, 945.0),
            "Informational": _block(5.0, 900.0),
            "Unknown": _block(6.0, 915.0),
        },
    )


BUILTIN_SCENARIOS = {"default": default_scenario, "smoke": smoke_scenario}


def scenario_to_kv(scenario: Scenario) -> dict[str, str]:
    out = {
        "name": scenario.name,
        "duration_min": repr(float(scenario.duration_min)),
        "start": iso_utc(scenario.start),
        "strata": ",".join(scenario.strata),
    }
    for name, block in scenario.strata.items():
        prefix = f"stratum.{name}."
        out[prefix + "base_rate"] = repr(float(block.base_rate))
        out[prefix + "diurnal_amplitude"] = repr(float(block.diurnal_amplitude))
        out[prefix + "diurnal_peak_min"] = repr(float(block.diurnal_peak_min))
        out[prefix + "surges_per_day"] = repr(float(block.surges_per_day))
        out[prefix + "surge_rate"] = repr(float(block.surge_rate))
        out[prefix + "surge_branching"] = repr(float(block.surge_branching))
        out[prefix + "surge_beta"] = repr(float(block.surge_beta))
        out[prefix + "surge_len_min"] = repr(float(block.surge_len_min))
        out[prefix + "surge_ramp_min"] = repr(float(block.surge_ramp_min))
        out[prefix + "surge_precursor_min"] = repr(float(block.surge_precursor_min))
        out[prefix + "surge_precursor_level"] = repr(float(block.surge_precursor_level))
    return out


def scenario_from_kv(entries: dict[str, str]) -> Scenario:
    from .ingest import parse_timestamp

    strata: dict[str, StratumScenario] = {}
    for name in kv.kv_list(entries, "strata"):
        prefix = f"stratum.{name}."
        strata[name] = StratumScenario(
            base_rate=kv.kv_float(entries, prefix + "base_rate"),
            diurnal_amplitude=kv.kv_float(entries, prefix + "diurnal_amplitude", 0.45),
            diurnal_peak_min=kv.kv_float(entries, prefix + "diurnal_peak_min", 960.0),
            surges_per_day=kv.kv_float(entries, prefix + "surges_per_day", 2.0),
            surge_rate=kv.kv_float(entries, prefix + "surge_rate", 0.0),
            surge_branching=kv.kv_float(entries, prefix + "surge_branching", 0.5),
            surge_beta=kv.kv_float(entries, prefix + "surge_beta", 1.2),
            surge_len_min=kv.kv_float(entries, prefix + "surge_len_min", 40.0),
            surge_ramp_min=kv.kv_float(entries, prefix + "surge_ramp_min", 10.0),
            surge_precursor_min=kv.kv_float(
                entries, prefix + "surge_precursor_min", 0.0),
            surge_precursor_level=kv.kv_float(
                entries, prefix + "surge_precursor_level", 0.0),
        )
    return Scenario(
        name=kv.kv_str(entries, "name", "custom"),
        duration_min=kv.kv_float(entries, "duration_min"),
        start=parse_timestamp(kv.kv_str(entries, "start", "2025-01-06T00:00:00Z")),
        strata=strata,
    )


def _surge_episode(block: StratumScenario, rng: np.random.Generator) -> np.ndarray:
    """One episode on [0, L): staged immigrants, Hawkes offspring.

    Immigrant intensity is A * shape(t) with shape = precursor trickle,
    then a linear climb to 1, then 1 until the hard stop at L.
    """
    L, ramp, A = block.surge_len_min, block.surge_ramp_min, block.surge_rate
    pre, level = block.surge_precursor_min, block.surge_precursor_level
    n_cand = rng.poisson(A * L)
    cand = np.sort(rng.uniform(0.0, L, n_cand))
    if ramp > 0:
        climb = level + (1.0 - level) * (cand - pre) / ramp
    else:
        climb = np.ones_like(cand)
    shape = np.clip(np.where(cand < pre, level, climb), 0.0, 1.0)
    gen = cand[rng.random(n_cand) < shape]
    events = [gen]
    r, beta = block.surge_branching, block.surge_beta
    while gen.size:
        n_children = rng.poisson(r, gen.size)
        total = int(n_children.sum())
        if total == 0:
            break
        parents = np.repeat(gen, n_children)
        children = parents + rng.exponential(1.0 / beta, total)
        gen = children[children < L]
        events.append(gen)
    return np.sort(np.concatenate(events))


def synth_alert_stream(
    scenario: Scenario, seed: int
) -> tuple[dict[str, np.ndarray], list[SurgeInterval]]:
    """Generate per-stratum event times (minutes) and surge truth intervals."""
    events: dict[str, np.ndarray] = {}
    truth: list[SurgeInterval] = []
    duration = float(scenario.duration_min)
    for name, block in scenario.strata.items():
        idx = STRATUM_ORDER.index(name)
        base_rng = np.random.default_rng([seed, idx, 0])
        surge_rng = np.random.default_rng([seed, idx, 1])
        baseline = simulate_nhpp(
            NhppParams(
                mean_rate=block.base_rate,
                amplitude=block.diurnal_amplitude,
                phase_min=block.diurnal_peak_min - DAY_MIN / 4.0,
            ),
            duration,
            base_rng,
        )
        parts = [baseline]
        if block.surges_per_day > 0 and block.surge_rate > 0:
            gap_rate = block.surges_per_day / DAY_MIN
            t = 0.0
            while True:
                t += surge_rng.exponential(1.0 / gap_rate)
                if t + block.surge_len_min >= duration:
                    break
                episode = _surge_episode(block, surge_rng) + t
                parts.append(episode)
                truth.append(SurgeInterval(name, t, t + block.surge_len_min))
                t += block.surge_len_min
        events[name] = np.sort(np.concatenate(parts))
    return events, truth


_SEVERITY_JSON = {
    "Critical": "1",
    "Major": "2",
    "Minor": "3",
    "Informational": "4",
    "Unknown": '"unknown"',
}


def write_alert_jsonl(path, events_by_stratum: dict[str, np.ndarray],
                      start: datetime) -> int:
    """Write a merged, time-sorted line-delimited JSON alert stream.

    Returns the number of lines written. Timestamps carry millisecond
    precision; ties are broken by the fixed stratum order so output is
    deterministic.
    """
    start_ms = epoch_ms(start)
    names = [n for n in STRATUM_ORDER if n in events_by_stratum]
    all_ms = []
    all_code = []
    for code, name in enumerate(names):
        t = np.asarray(events_by_stratum[name], dtype=np.float64)
        all_ms.append(np.round(t * 60000.0).astype(np.int64) + start_ms)
        all_code.append(np.full(t.size, code, dtype=np.int64))
    if not all_ms:
        raise ValidationError("no strata to write")
    ms = np.concatenate(all_ms)
    code = np.concatenate(all_code)
    order = np.lexsort((code, ms))
    ms = ms[order]
    code = code[order]
    sev_json = [_SEVERITY_JSON[name] for name in names]
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(ms.size):
            ts = EPOCH + timedelta(milliseconds=int(ms[i]))
            handle.write(
                f'{{"timestamp":"{iso_utc(ts, ms=True)}","event_type":"alert",'
                f'"alert":{{"severity":{sev_json[code[i]]},"signature":"synthetic"}}}}\n'
            )
    return int(ms.size)


def write_surge_truth_csv(truth: list[SurgeInterval], start: datetime, path) -> None:
    lines = ["stratum,start_min,end_min,utc_start,utc_end"]
    for iv in truth:
        utc_a = start + timedelta(minutes=iv.start_min)
        utc_b = start + timedelta(minutes=iv.end_min)
        lines.append(
            f"{iv.stratum},{float(iv.start_min)!r},{float(iv.end_min)!r},"
            f"{iso_utc(utc_a, ms=True)},{iso_utc(utc_b, ms=True)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
