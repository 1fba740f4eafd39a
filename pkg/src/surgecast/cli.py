"""Command-line entry point: the pipeline as composable subcommands.

Every stage reads and writes plain files (CSV plus small ``key = value``
metadata sidecars) so intermediates stay inspectable; any stage's output is a
valid input to the next with no hand editing. Progress goes to standard
error, results only to files or standard output, and each invocation appends
a manifest block next to its outputs.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from . import config as kvmod
from .errors import SurgecastError, ValidationError
from .features import (
    FeatureConfig,
    FeatureFrame,
    FeatureStream,
    featurize,
    parse_feature_subset,
    read_features_csv,
    write_features_csv,
)
from .ingest import (
    EPOCH,
    IngestConfig,
    ParseStats,
    STRATUM_ORDER,
    bin_by_stratum,
    downsample,
    epoch_ms,
    iso_utc,
    open_alert_file,
    parse_timestamp,
    read_alert_stream,
    read_binned_csv,
    write_binned_csv,
)
from .labels import (
    RegimeLabelSet,
    fit_threshold_then_label,
    read_labels_csv,
    test_rows,
    train_rows,
    write_labels_csv,
    write_labels_meta,
)
from .model import (
    TrainingConfig,
    ablation_suite,
    evaluate,
    load_model,
    predict_proba,
    save_model,
    subset_name,
    train_gbdt,
    write_eval_csv,
)
from .pointprocess import (
    BUILTIN_SCENARIOS,
    multiscale_study,
    scenario_from_kv,
    scenario_to_kv,
    synth_alert_stream,
    write_alert_jsonl,
    write_scalefits_csv,
    write_surge_truth_csv,
)
from .report import (
    ReportBundle,
    bundle_to_html,
    render_overlay,
    render_phase_portrait,
    render_snapshot,
)

_EXIT_OK = 0
_EXIT_VALIDATION = 1
_EXIT_IO = 2


def _progress(message: str) -> None:
    print(f"[surgecast] {message}", file=sys.stderr, flush=True)


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2 by default; we reserve 2 for I/O."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(_EXIT_VALIDATION)


# --- shared settings -------------------------------------------------------


@dataclass
class Settings:
    """Effective knobs after merging CLI flags over an optional config file."""

    alpha: float = 0.3
    window: int = 5
    epsilon: float = 1e-6
    horizon: int = 30
    quantile: float = 0.95
    train_fraction: float = 0.7
    bin_width: int = 60
    features: str = "l,m,v"
    entries: dict[str, str] = field(default_factory=dict)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.alpha, self.window, self.epsilon)


def _load_settings(args: argparse.Namespace) -> Settings:
    entries = kvmod.read_kv(args.config) if getattr(args, "config", None) else {}

    def pick(flag: str, key: str, default, cast):
        value = getattr(args, flag, None)
        if value is not None:
            return value
        if key in entries:
            return cast(entries[key])
        return default

    return Settings(
        alpha=pick("alpha", "alpha", 0.3, float),
        window=pick("window", "window", 5, int),
        epsilon=pick("epsilon", "epsilon", 1e-6, float),
        horizon=pick("horizon", "horizon", 30, int),
        quantile=pick("quantile", "quantile_level", 0.95, float),
        train_fraction=pick("train_fraction", "train_fraction", 0.7, float),
        bin_width=pick("bin_width", "bin_width_s", 60, int),
        features=pick("features", "features", "l,m,v", str),
        entries=entries,
    )


def _ingest_config(settings: Settings) -> IngestConfig:
    cfg = IngestConfig.from_kv(settings.entries)
    if cfg.bin_width_s != settings.bin_width:
        cfg = IngestConfig(cfg.timestamp_field, cfg.severity_field,
                           settings.bin_width, cfg.severity_map)
    return cfg


def _training_config(settings: Settings) -> TrainingConfig:
    e = settings.entries
    return TrainingConfig(
        n_rounds=kvmod.kv_int(e, "n_rounds", 200),
        max_depth=kvmod.kv_int(e, "max_depth", 4),
        learning_rate=kvmod.kv_float(e, "learning_rate", 0.1),
        min_child_weight=kvmod.kv_float(e, "min_child_weight", 1.0),
    )


# --- run manifest ----------------------------------------------------------


@dataclass
class RunManifest:
    """Append-only provenance block written next to a subcommand's outputs."""

    subcommand: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    seed: int | None = None
    settings: dict[str, str] = field(default_factory=dict)
    skipped: int = 0
    warnings: int = 0

    def write(self, out_dir: Path, started: float) -> None:
        lines = [
            f"# ---- {self.subcommand} ----",
            f"subcommand = {self.subcommand}",
            f"version = {__version__}",
        ]
        lines += [f"in.{i} = {p}" for i, p in enumerate(self.inputs)]
        lines += [f"out.{i} = {p}" for i, p in enumerate(self.outputs)]
        if self.seed is not None:
            lines.append(f"seed = {self.seed}")
        lines += [f"{k} = {self.settings[k]}" for k in sorted(self.settings)]
        lines.append(f"skipped = {self.skipped}")
        lines.append(f"warnings = {self.warnings}")
        # wall clock varies run to run; determinism claims exclude this file
        lines.append(f"wall_clock_s = {time.perf_counter() - started:.3f}")
        with open(out_dir / "manifest.txt", "a", encoding="utf-8") as handle:
            handle.write("\n".join(lines) + "\n\n")


def _out_dir(args: argparse.Namespace) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- per-stratum artifact discovery ----------------------------------------


def _select_inputs(in_path: Path, prefix: str,
                   stratum: str | None) -> list[tuple[str, Path]]:
    """Resolve ``<prefix>_<stratum>.csv`` inputs from a directory or file."""
    if in_path.is_dir():
        pairs = [
            (name, in_path / f"{prefix}_{name}.csv")
            for name in STRATUM_ORDER
            if (in_path / f"{prefix}_{name}.csv").exists()
        ]
        if stratum is not None:
            pairs = [(n, p) for n, p in pairs if n == stratum]
        if not pairs:
            raise ValidationError(
                f"no {prefix}_<stratum>.csv files matching in {in_path}"
            )
        return pairs
    name = stratum
    if name is None:
        stem = in_path.stem
        if stem.startswith(prefix + "_") and stem[len(prefix) + 1:] in STRATUM_ORDER:
            name = stem[len(prefix) + 1:]
    if name is None:
        raise ValidationError(
            f"cannot tell which stratum {in_path} holds; pass --stratum"
        )
    return [(name, in_path)]


def _read_frame(csv_path: Path, name: str, settings: Settings) -> FeatureFrame:
    """Feature CSV plus its metadata sidecar (when present) back to a frame."""
    meta_path = csv_path.with_suffix(".meta")
    origin = None
    bin_width = settings.bin_width
    config = settings.feature_config()
    if meta_path.exists():
        meta = kvmod.read_kv(meta_path)
        origin = parse_timestamp(kvmod.kv_str(meta, "origin_utc"))
        bin_width = kvmod.kv_int(meta, "bin_width_s", bin_width)
        config = FeatureConfig(
            alpha=kvmod.kv_float(meta, "alpha", config.alpha),
            window=kvmod.kv_int(meta, "window", config.window),
            epsilon=kvmod.kv_float(meta, "epsilon", config.epsilon),
        )
    return read_features_csv(csv_path, name, origin=origin,
                             bin_width_s=bin_width, config=config)


def _read_labeled(in_dir: Path, name: str,
                  settings: Settings) -> tuple[FeatureFrame, RegimeLabelSet]:
    frame = _read_frame(in_dir / f"features_{name}.csv", name, settings)
    label_set = read_labels_csv(
        in_dir / f"labels_{name}.csv", in_dir / f"labels_{name}.meta"
    )
    return frame, label_set


def _labeled_strata(in_dir: Path, stratum: str | None) -> list[str]:
    names = [
        name for name in STRATUM_ORDER
        if (in_dir / f"features_{name}.csv").exists()
        and (in_dir / f"labels_{name}.csv").exists()
    ]
    if stratum is not None:
        names = [n for n in names if n == stratum]
    if not names:
        raise ValidationError(f"no features/labels pairs matching in {in_dir}")
    return names


def _model_meta(frame: FeatureFrame, label_set: RegimeLabelSet,
                schema: tuple[str, ...]) -> dict[str, str]:
    """Everything the streaming scorer needs to reproduce the features."""
    meta = {
        "stratum": frame.stratum,
        "origin_utc": iso_utc(frame.origin, ms=True),
        "bin_width_s": str(frame.bin_width_s),
        "features": subset_name(schema),
        "threshold": repr(float(label_set.threshold)),
        "quantile_level": repr(float(label_set.quantile_level)),
        "horizon": str(label_set.horizon),
        "train_fraction": repr(float(label_set.plan.train_fraction)),
    }
    meta.update(frame.config.to_kv())
    return meta


def _train_one(frame: FeatureFrame, label_set: RegimeLabelSet,
               schema: tuple[str, ...], training: TrainingConfig):
    rows = train_rows(label_set, frame)
    X = frame.matrix(schema)
    y = label_set.labels.astype(np.float64)
    return train_gbdt(X[rows], y[rows], schema, config=training,
                      meta=_model_meta(frame, label_set, schema))


# --- subcommands -----------------------------------------------------------


def cmd_ingest(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    cfg = _ingest_config(settings)
    stats = ParseStats()
    records = open_alert_file(args.inp, cfg, stats, want_raw=False)
    if args.sample is not None:
        if args.seed is None:
            raise ValidationError("--sample draws random records; --seed is required")
        records = downsample(records, args.sample, args.seed)
    series = bin_by_stratum(records, settings.bin_width)
    if args.stratum is not None:
        if args.stratum not in series:
            raise ValidationError(f"no {args.stratum} records in {args.inp}")
        series = {args.stratum: series[args.stratum]}
    out = _out_dir(args)
    written = []
    for name in STRATUM_ORDER:
        if name not in series:
            continue
        path = out / f"binned_{name}.csv"
        write_binned_csv(series[name], path)
        written.append(str(path))
        _progress(f"{name}: {series[name].n_bins} bins, "
                  f"{int(series[name].counts.sum())} alerts")
    _progress(f"parsed {stats.parsed} records, skipped {stats.skipped}")
    manifest = RunManifest(
        "ingest", inputs=[str(args.inp)], outputs=written, seed=args.seed,
        settings={"bin_width_s": str(settings.bin_width), **cfg.to_kv()},
        skipped=stats.skipped,
    )
    manifest.write(out, started)
    return _EXIT_OK


def cmd_featurize(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    config = settings.feature_config()
    pairs = _select_inputs(Path(args.inp), "binned", args.stratum)
    out = _out_dir(args)
    written = []
    for name, path in pairs:
        series = read_binned_csv(path, name, bin_width_s=settings.bin_width)
        frame = featurize(series, config)
        csv_path = out / f"features_{name}.csv"
        write_features_csv(frame, csv_path)
        kvmod.write_kv(csv_path.with_suffix(".meta"), {
            "stratum": name,
            "origin_utc": iso_utc(frame.origin, ms=True),
            "bin_width_s": str(frame.bin_width_s),
            **config.to_kv(),
        })
        written.append(str(csv_path))
        _progress(f"{name}: {frame.n_bins} minutes featurized")
    manifest = RunManifest(
        "featurize", inputs=[str(args.inp)], outputs=written,
        settings=config.to_kv(),
    )
    manifest.write(out, started)
    return _EXIT_OK


def cmd_label(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    pairs = _select_inputs(Path(args.inp), "features", args.stratum)
    out = _out_dir(args)
    written = []
    for name, path in pairs:
        frame = _read_frame(path, name, settings)
        label_set = fit_threshold_then_label(
            frame, settings.quantile, settings.horizon, settings.train_fraction
        )
        csv_path = out / f"labels_{name}.csv"
        write_labels_csv(label_set, frame, csv_path)
        write_labels_meta(label_set, out / f"labels_{name}.meta")
        written.append(str(csv_path))
        _progress(
            f"{name}: threshold {label_set.threshold:.4f}, "
            f"{int(label_set.labels.sum())}/{label_set.labels.size} positive"
        )
    manifest = RunManifest(
        "label", inputs=[str(args.inp)], outputs=written,
        settings={
            "quantile_level": repr(settings.quantile),
            "horizon": str(settings.horizon),
            "train_fraction": repr(settings.train_fraction),
        },
    )
    manifest.write(out, started)
    return _EXIT_OK


def cmd_simulate(args: argparse.Namespace, started: float) -> int:
    factory = BUILTIN_SCENARIOS.get(args.scenario)
    if factory is not None:
        scenario = factory()
    elif Path(args.scenario).exists():
        scenario = scenario_from_kv(kvmod.read_kv(args.scenario))
    else:
        known = ", ".join(sorted(BUILTIN_SCENARIOS))
        raise ValidationError(
            f"unknown scenario {args.scenario!r}: expected one of {known} "
            f"or a scenario file"
        )
    events, truth = synth_alert_stream(scenario, args.seed)
    out = _out_dir(args)
    alerts_path = out / "alerts.jsonl"
    n_lines = write_alert_jsonl(alerts_path, events, scenario.start)
    write_surge_truth_csv(truth, scenario.start, out / "surge_truth.csv")
    kvmod.write_kv(out / "scenario.kv", scenario_to_kv(scenario))
    for name in STRATUM_ORDER:
        if name in events:
            mean = events[name].size / scenario.duration_min
            _progress(f"{name}: {events[name].size} events "
                      f"({mean:.3f}/min over {scenario.duration_min:g} min)")
    _progress(f"wrote {n_lines} alert lines, {len(truth)} surge intervals")
    manifest = RunManifest(
        "simulate", outputs=[str(alerts_path)], seed=args.seed,
        settings=scenario_to_kv(scenario),
    )
    manifest.write(out, started)
    return _EXIT_OK


def cmd_fit_pp(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    cfg = _ingest_config(settings)
    in_path = Path(args.inp)
    if in_path.is_dir():
        in_path = in_path / "alerts.jsonl"
    windows = [float(w) for w in args.windows.split(",") if w.strip()]
    stats = ParseStats()
    per_stratum: dict[str, list[int]] = {}
    lo = hi = None
    for record in open_alert_file(in_path, cfg, stats, want_raw=False):
        ms = epoch_ms(record.ts)
        per_stratum.setdefault(record.severity.value, []).append(ms)
        lo = ms if lo is None or ms < lo else lo
        hi = ms if hi is None or ms > hi else hi
    if lo is None:
        raise ValidationError(f"no parseable events in {in_path}")
    origin_ms = lo // 60000 * 60000
    duration = float((hi - origin_ms) // 60000 + 1)
    names = [n for n in STRATUM_ORDER if n in per_stratum]
    if args.stratum is not None:
        if args.stratum not in per_stratum:
            raise ValidationError(f"no {args.stratum} events in {in_path}")
        names = [args.stratum]
    out = _out_dir(args)
    written = []
    for name in names:
        times = (np.asarray(per_stratum[name], dtype=np.float64) - origin_ms) / 60000.0
        times.sort()
        rows = multiscale_study(times, duration, windows, seed=args.seed)
        path = out / f"scalefits_{name}.csv"
        write_scalefits_csv(rows, path)
        written.append(str(path))
        for row in rows:
            extra = ""
            if row.model == "hawkes":
                extra = f", branching {row.report.params.branching_ratio:.3f}"
            _progress(
                f"{name} @ {row.window_min:g} min: {row.model} "
                f"loglik {row.report.loglik:.1f}, AIC {row.report.aic:.1f}{extra}"
            )
    manifest = RunManifest(
        "fit-pp", inputs=[str(in_path)], outputs=written, seed=args.seed,
        settings={"windows": args.windows}, skipped=stats.skipped,
    )
    manifest.write(out, started)
    return _EXIT_OK


def cmd_train(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    schema = parse_feature_subset(settings.features)
    training = _training_config(settings)
    in_dir = Path(args.inp)
    names = _labeled_strata(in_dir, args.stratum)
    out = _out_dir(args)
    written = []
    for name in names:
        frame, label_set = _read_labeled(in_dir, name, settings)
        forest = _train_one(frame, label_set, schema, training)
        path = out / f"model_{name}.txt"
        save_model(forest, path)
        written.append(str(path))
        _progress(
            f"{name}: {len(forest.trees)} trees on {subset_name(schema)}, "
            f"train loss {forest.train_losses[0]:.4f} -> {forest.train_losses[-1]:.4f}"
        )
    manifest = RunManifest(
        "train", inputs=[str(in_dir)], outputs=written,
        settings={"features": subset_name(schema),
                  "n_rounds": str(training.n_rounds),
                  "max_depth": str(training.max_depth),
                  "learning_rate": repr(training.learning_rate)},
    )
    manifest.write(out, started)
    return _EXIT_OK


def cmd_evaluate(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    in_dir = Path(args.inp)
    names = _labeled_strata(in_dir, args.stratum)
    out = _out_dir(args)
    reports = []
    for name in names:
        frame, label_set = _read_labeled(in_dir, name, settings)
        forest = load_model(in_dir / f"model_{name}.txt")
        rows = test_rows(label_set)
        X = frame.matrix(forest.feature_schema)
        report = evaluate(forest, X[rows], label_set.labels[rows], stratum=name)
        reports.append(report)
        auc = "NA" if report.roc_auc is None else f"{report.roc_auc:.4f}"
        _progress(f"{name}: AUC {auc}, F1 {report.f1:.4f} on {rows.size} rows")
    path = out / "eval.csv"
    write_eval_csv(reports, path)
    manifest = RunManifest("evaluate", inputs=[str(in_dir)], outputs=[str(path)])
    manifest.write(out, started)
    return _EXIT_OK


def cmd_ablate(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    training = _training_config(settings)
    in_dir = Path(args.inp)
    names = _labeled_strata(in_dir, args.stratum)
    out = _out_dir(args)
    reports = []
    for name in names:
        frame, label_set = _read_labeled(in_dir, name, settings)
        suite = ablation_suite(frame, label_set, training=training)
        reports.extend(suite)
        for report in suite:
            auc = "NA" if report.roc_auc is None else f"{report.roc_auc:.4f}"
            _progress(f"{name} [{report.config_name}]: AUC {auc}, F1 {report.f1:.4f}")
    path = out / "ablation.csv"
    write_eval_csv(reports, path)
    manifest = RunManifest("ablate", inputs=[str(in_dir)], outputs=[str(path)])
    manifest.write(out, started)
    return _EXIT_OK


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in text.lower()).strip("-")


def cmd_report(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    in_dir = Path(args.inp)
    names = _labeled_strata(in_dir, args.stratum)
    out = _out_dir(args)
    bundle = ReportBundle(title="alert surge early-warning report")
    metadata: dict[str, str] = {"generated_by": f"surgecast {__version__}"}
    snapshot_probs: dict[str, float] = {}
    snapshot_idx: int | None = None
    for name in names:
        frame, label_set = _read_labeled(in_dir, name, settings)
        forest = load_model(in_dir / f"model_{name}.txt")
        X = frame.matrix(forest.feature_schema)
        probs = predict_proba(forest, X)
        lo, hi = label_set.plan.train
        train_lam = frame.lam[lo:hi][~frame.warmup[lo:hi]]
        norm_max = float(train_lam.max()) if train_lam.size else float(frame.lam.max())
        slices = [label_set.plan.train[1], label_set.plan.test[0]]
        bundle.add(
            f"{name}: intensity, probability, extreme intervals",
            render_overlay(
                frame.lam, probs, label_set.labels, slices=slices,
                norm_max=norm_max,
                title=f"{name} (dashed markers: end of train / start of test)",
            ),
        )
        if {"momentum", "volatility"} <= set(forest.feature_schema):
            bundle.add(
                f"{name}: decision surface",
                render_phase_portrait(forest, frame, grid_resolution=args.grid,
                                      title=f"{name} P(extreme) over (m, v)"),
            )
        last_labeled = label_set.labels.size - 1
        snapshot_idx = (last_labeled if snapshot_idx is None
                        else min(snapshot_idx, last_labeled))
        snapshot_probs[name] = probs
        metadata[f"{name}.threshold"] = f"{label_set.threshold:.4f}"
        metadata[f"{name}.horizon_min"] = str(label_set.horizon)
        metadata[f"{name}.test_rows"] = str(test_rows(label_set).size)
    if snapshot_idx is not None:
        at = {name: float(p[snapshot_idx]) for name, p in snapshot_probs.items()}
        bundle.add(
            "cross-stratum snapshot",
            render_snapshot(at, title=f"P(extreme) at minute {snapshot_idx}"),
        )
    bundle.metadata = dict(sorted(metadata.items()))
    html = bundle_to_html(bundle)
    path = out / "report.html"
    path.write_text(html, encoding="utf-8")
    written = [str(path)]
    if args.panels:
        for heading, svg in bundle.sections:
            svg_path = out / f"{_slug(heading)}.svg"
            svg_path.write_text(svg + "\n", encoding="utf-8")
            written.append(str(svg_path))
    _progress(f"report with {len(bundle.sections)} panels -> {path}")
    manifest = RunManifest("report", inputs=[str(in_dir)], outputs=written,
                           settings={"grid": str(args.grid)})
    manifest.write(out, started)
    return _EXIT_OK


# --- streaming scorer -------------------------------------------------------


@dataclass
class _ScoreState:
    forest: object
    stream: FeatureStream
    width_ms: int
    open_floor: int | None = None
    count: int = 0


def _load_score_models(model_path: Path) -> dict[str, _ScoreState]:
    if model_path.is_dir():
        paths = [model_path / f"model_{n}.txt" for n in STRATUM_ORDER
                 if (model_path / f"model_{n}.txt").exists()]
        if not paths:
            raise ValidationError(f"no model_<stratum>.txt files in {model_path}")
    else:
        paths = [model_path]
    states: dict[str, _ScoreState] = {}
    for path in paths:
        forest = load_model(path)
        meta = forest.meta
        stratum = kvmod.kv_str(meta, "stratum", "")
        if stratum not in STRATUM_ORDER:
            raise ValidationError(f"{path}: model metadata lacks a valid stratum")
        config = FeatureConfig(
            alpha=kvmod.kv_float(meta, "alpha", 0.3),
            window=kvmod.kv_int(meta, "window", 5),
            epsilon=kvmod.kv_float(meta, "epsilon", 1e-6),
        )
        width_ms = kvmod.kv_int(meta, "bin_width_s", 60) * 1000
        states[stratum] = _ScoreState(
            forest=forest, stream=FeatureStream(config), width_ms=width_ms
        )
    return states


def _emit_minute(handle, name: str, state: _ScoreState, floor_ms: int,
                 count: int) -> None:
    lam, mom, vol, _ = state.stream.push(float(count))
    row = {"lambda": lam, "momentum": mom, "volatility": vol}
    X = np.asarray([[row[f] for f in state.forest.feature_schema]])
    prob = float(predict_proba(state.forest, X)[0])
    ts = EPOCH + timedelta(milliseconds=floor_ms)
    handle.write(
        f"{iso_utc(ts)},{name},{lam!r},{mom!r},{vol!r},{prob!r}\n"
    )


def cmd_score(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    cfg = _ingest_config(settings)
    states = _load_score_models(Path(args.model))
    stats = ParseStats()
    late = 0

    if args.inp in (None, "-"):
        source = sys.stdin
        close_source = False
    else:
        source = open(args.inp, "r", encoding="utf-8")
        close_source = True
    if args.out is not None:
        handle = open(args.out, "w", encoding="utf-8")
        close_out = True
    else:
        handle = sys.stdout
        close_out = False
    try:
        for record in read_alert_stream(source, cfg, stats, want_raw=False):
            state = states.get(record.severity.value)
            if state is None:
                continue  # stratum without a model: not an error, just unscored
            ms = epoch_ms(record.ts)
            floor = ms // state.width_ms * state.width_ms
            if state.open_floor is None:
                state.open_floor = floor
                state.count = 1
            elif floor == state.open_floor:
                state.count += 1
            elif floor < state.open_floor:
                late += 1  # out-of-order record for an already-closed minute
            else:
                _emit_minute(handle, record.severity.value, state,
                             state.open_floor, state.count)
                gap = state.open_floor + state.width_ms
                while gap < floor:
                    _emit_minute(handle, record.severity.value, state, gap, 0)
                    gap += state.width_ms
                state.open_floor = floor
                state.count = 1
        # end of stream closes every open minute
        for name in STRATUM_ORDER:
            state = states.get(name)
            if state is not None and state.open_floor is not None:
                _emit_minute(handle, name, state, state.open_floor, state.count)
        handle.flush()
    finally:
        if close_source:
            source.close()
        if close_out:
            handle.close()
    _progress(f"scored stream: {stats.parsed} records, "
              f"{stats.skipped} malformed skipped, {late} late skipped")
    if args.out is not None:
        manifest = RunManifest(
            "score", inputs=[str(args.inp or '-')], outputs=[str(args.out)],
            skipped=stats.skipped + late,
        )
        manifest.write(Path(args.out).resolve().parent, started)
    return _EXIT_OK


# --- end-to-end pipeline ----------------------------------------------------


def cmd_pipeline(args: argparse.Namespace, started: float) -> int:
    settings = _load_settings(args)
    cfg = _ingest_config(settings)
    schema = parse_feature_subset(settings.features)
    training = _training_config(settings)
    in_path = Path(args.inp)
    if in_path.is_dir():
        in_path = in_path / "alerts.jsonl"
    out = _out_dir(args)

    stats = ParseStats()
    series = bin_by_stratum(
        open_alert_file(in_path, cfg, stats, want_raw=False), settings.bin_width
    )
    names = [n for n in STRATUM_ORDER if n in series]
    if args.stratum is not None:
        if args.stratum not in series:
            raise ValidationError(f"no {args.stratum} records in {in_path}")
        names = [args.stratum]
    _progress(f"binned {stats.parsed} records into {len(names)} strata "
              f"({stats.skipped} skipped)")

    def run_stratum(name: str):
        frame = featurize(series[name], settings.feature_config())
        label_set = fit_threshold_then_label(
            frame, settings.quantile, settings.horizon, settings.train_fraction
        )
        forest = _train_one(frame, label_set, schema, training)
        rows = test_rows(label_set)
        X = frame.matrix(forest.feature_schema)
        report = evaluate(forest, X[rows], label_set.labels[rows], stratum=name)
        return frame, label_set, forest, report, predict_proba(forest, X)

    # strata are independent; keep output ordering fixed regardless of timing
    results: dict[str, tuple] = {}
    failures: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=min(4, len(names))) as pool:
        futures = {name: pool.submit(run_stratum, name) for name in names}
        for name in names:
            try:
                results[name] = futures[name].result()
            except SurgecastError as exc:
                failures[name] = str(exc)
                _progress(f"{name}: skipped ({exc})")

    bundle = ReportBundle(title="alert surge early-warning report")
    metadata: dict[str, str] = {
        "generated_by": f"surgecast {__version__}",
        "features": subset_name(schema),
        "source": in_path.name,
    }
    reports = []
    snapshot_probs: dict[str, np.ndarray] = {}
    snapshot_idx: int | None = None
    for name in names:
        if name not in results:
            continue
        frame, label_set, forest, report, probs = results[name]
        write_binned_csv(series[name], out / f"binned_{name}.csv")
        csv_path = out / f"features_{name}.csv"
        write_features_csv(frame, csv_path)
        kvmod.write_kv(csv_path.with_suffix(".meta"), {
            "stratum": name,
            "origin_utc": iso_utc(frame.origin, ms=True),
            "bin_width_s": str(frame.bin_width_s),
            **frame.config.to_kv(),
        })
        write_labels_csv(label_set, frame, out / f"labels_{name}.csv")
        write_labels_meta(label_set, out / f"labels_{name}.meta")
        save_model(forest, out / f"model_{name}.txt")
        reports.append(report)
        auc = "NA" if report.roc_auc is None else f"{report.roc_auc:.4f}"
        _progress(f"{name}: AUC {auc}, F1 {report.f1:.4f}")

        lo, hi = label_set.plan.train
        train_lam = frame.lam[lo:hi][~frame.warmup[lo:hi]]
        norm_max = float(train_lam.max()) if train_lam.size else float(frame.lam.max())
        bundle.add(
            f"{name}: intensity, probability, extreme intervals",
            render_overlay(
                frame.lam, probs, label_set.labels,
                slices=[label_set.plan.train[1], label_set.plan.test[0]],
                norm_max=norm_max,
                title=f"{name} (dashed markers: end of train / start of test)",
            ),
        )
        if {"momentum", "volatility"} <= set(forest.feature_schema):
            bundle.add(
                f"{name}: decision surface",
                render_phase_portrait(forest, frame, grid_resolution=args.grid,
                                      title=f"{name} P(extreme) over (m, v)"),
            )
        last_labeled = label_set.labels.size - 1
        snapshot_idx = (last_labeled if snapshot_idx is None
                        else min(snapshot_idx, last_labeled))
        snapshot_probs[name] = probs
        metadata[f"{name}.threshold"] = f"{label_set.threshold:.4f}"
    if not reports:
        raise ValidationError("every stratum failed; nothing to report")
    write_eval_csv(reports, out / "eval.csv")
    if snapshot_idx is not None:
        at = {name: float(p[snapshot_idx]) for name, p in snapshot_probs.items()}
        bundle.add(
            "cross-stratum snapshot",
            render_snapshot(at, title=f"P(extreme) at minute {snapshot_idx}"),
        )
    bundle.metadata = dict(sorted(metadata.items()))
    (out / "report.html").write_text(bundle_to_html(bundle), encoding="utf-8")
    _progress(f"pipeline artifacts in {out}")
    manifest = RunManifest(
        "pipeline", inputs=[str(in_path)], outputs=[str(out / "eval.csv"),
                                                    str(out / "report.html")],
        settings={
            "features": subset_name(schema),
            "alpha": repr(settings.alpha),
            "window": str(settings.window),
            "horizon": str(settings.horizon),
            "quantile_level": repr(settings.quantile),
            "train_fraction": repr(settings.train_fraction),
            "bin_width_s": str(settings.bin_width),
        },
        skipped=stats.skipped,
        warnings=len(failures),
    )
    manifest.write(out, started)
    return _EXIT_OK


# --- parser -----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *, inp=True, out=True,
                seed=False, stratum=True) -> None:
    if inp:
        p.add_argument("--in", dest="inp", required=True,
                       help="input file or directory")
    if out:
        p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value config file")
    if seed:
        p.add_argument("--seed", type=int, help="RNG seed")
    if stratum:
        p.add_argument("--stratum", choices=STRATUM_ORDER,
                       help="restrict to one severity stratum")


def _add_knobs(p: argparse.ArgumentParser, names: tuple[str, ...]) -> None:
    if "alpha" in names:
        p.add_argument("--alpha", type=float, help="EMA smoothing factor")
    if "window" in names:
        p.add_argument("--window", type=int, help="rolling window in minutes")
    if "horizon" in names:
        p.add_argument("--horizon", type=int, help="look-ahead horizon in minutes")
    if "quantile" in names:
        p.add_argument("--quantile", type=float,
                       help="intensity quantile level for the extreme threshold")
    if "train-fraction" in names:
        p.add_argument("--train-fraction", dest="train_fraction", type=float,
                       help="chronological training fraction")
    if "features" in names:
        p.add_argument("--features", help="feature subset, e.g. l,m,v")
    if "bin-width" in names:
        p.add_argument("--bin-width", dest="bin_width", type=int,
                       help="bin width in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="surgecast",
        description="minute-level alert surge early warning",
    )
    parser.add_argument("--version", action="version",
                        version=f"surgecast {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="parse an alert stream into binned counts")
    _add_common(p, seed=True)
    _add_knobs(p, ("bin-width",))
    p.add_argument("--sample", type=float,
                   help="stratified downsampling fraction in (0, 1]")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("featurize", help="intensity, momentum, volatility")
    _add_common(p)
    _add_knobs(p, ("alpha", "window", "bin-width"))
    p.set_defaults(handler=cmd_featurize)

    p = sub.add_parser("label", help="extreme-regime labels with a purged split")
    _add_common(p)
    _add_knobs(p, ("horizon", "quantile", "train-fraction"))
    p.set_defaults(handler=cmd_label)

    p = sub.add_parser("simulate", help="generate a synthetic alert stream")
    _add_common(p, inp=False, stratum=False)
    p.add_argument("--scenario", default="default",
                   help="builtin scenario name or scenario file")
    p.add_argument("--seed", type=int, required=True, help="RNG seed")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit-pp", help="fit point-process models across bin widths")
    _add_common(p, seed=True)
    p.add_argument("--windows", default="1,5,15",
                   help="comma-separated bin widths in minutes")
    p.set_defaults(handler=cmd_fit_pp)
    p.set_defaults(seed=0)

    p = sub.add_parser("train", help="train the surge classifier")
    _add_common(p)
    _add_knobs(p, ("features",))
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="score the classifier on held-out rows")
    _add_common(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("ablate", help="compare feature subsets on fixed splits")
    _add_common(p)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("report", help="render the SVG/HTML report")
    _add_common(p)
    p.add_argument("--grid", type=int, default=48,
                   help="phase-portrait grid resolution")
    p.add_argument("--panels", action="store_true",
                   help="also write each panel as a standalone .svg")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("score", help="stream alerts through trained models")
    p.add_argument("--in", dest="inp",
                   help="alert stream file ('-' or omitted for stdin)")
    p.add_argument("--model", required=True,
                   help="model file or directory of model_<stratum>.txt")
    p.add_argument("--out", help="write rows here instead of stdout")
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("pipeline", help="ingest through report in one run")
    _add_common(p)
    _add_knobs(p, ("alpha", "window", "horizon", "quantile",
                   "train-fraction", "features", "bin-width"))
    p.add_argument("--grid", type=int, default=48,
                   help="phase-portrait grid resolution")
    p.set_defaults(handler=cmd_pipeline)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    return args.handler(args, started)


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else _EXIT_VALIDATION
    except SurgecastError as exc:
        print(f"surgecast: error: {exc}", file=sys.stderr)
        return _EXIT_VALIDATION
    except OSError as exc:
        print(f"surgecast: i/o error: {exc}", file=sys.stderr)
        return _EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
