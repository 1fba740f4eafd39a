import xml.etree.ElementTree as ET

import numpy as np
import pytest

from surgecast.errors import ValidationError
from surgecast.model.gbdt import TrainingConfig, predict_proba, train_gbdt
from surgecast.report import (
    ReportBundle,
    bundle_to_html,
    label_runs,
    phase_grid,
    render_overlay,
    render_phase_portrait,
    render_snapshot,
)

SCHEMA = ("lambda", "momentum", "volatility")


def brute_runs(labels):
    runs, start = [], None
    for i, v in enumerate(labels):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(labels)))
    return runs


def svg_elements(svg, cls):
    root = ET.fromstring(svg)
    return [
        el for el in root.iter()
        if el.get("class") == cls
    ]


def phase_fixture(burst_frame):
    keep = ~burst_frame.warmup
    X = burst_frame.matrix(SCHEMA)[keep]
    y = (burst_frame.lam[keep] > np.median(burst_frame.lam[keep])).astype(np.float64)
    forest = train_gbdt(X, y, SCHEMA, TrainingConfig(n_rounds=10, max_depth=2))
    return forest


# --- label runs ---------------------------------------------------------------


def test_label_runs_hand_cases():
    assert label_runs([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    assert label_runs([1, 1, 0, 0]) == [(0, 2)]
    assert label_runs([0, 0]) == []
    assert label_runs([1]) == [(0, 1)]
    assert label_runs([]) == []


def test_label_runs_match_brute_force():
    rng = np.random.default_rng(31)
    for _ in range(25):
        labels = (rng.random(rng.integers(1, 400)) < 0.3).astype(int)
        assert label_runs(labels) == brute_runs(labels.tolist())


def test_label_runs_reject_matrix():
    with pytest.raises(ValidationError):
        label_runs(np.zeros((3, 3)))


# --- overlay ------------------------------------------------------------------


def test_overlay_shades_exactly_the_runs():
    rng = np.random.default_rng(32)
    for _ in range(5):
        n = int(rng.integers(20, 300))
        lam = rng.gamma(3.0, 2.0, n)
        probs = rng.random(n)
        labels = (rng.random(n) < 0.25).astype(int)
        svg = render_overlay(lam, probs, labels)
        rects = svg_elements(svg, "extreme")
        got = [(int(r.get("data-start")), int(r.get("data-end"))) for r in rects]
        assert got == brute_runs(labels.tolist())


def test_overlay_index_offset_shifts_annotations():
    lam = np.ones(10)
    probs = np.zeros(10)
    labels = np.zeros(10, dtype=int)
    labels[4:7] = 1
    svg = render_overlay(lam, probs, labels, index_offset=700)
    rect = svg_elements(svg, "extreme")[0]
    assert (rect.get("data-start"), rect.get("data-end")) == ("704", "707")


def test_overlay_empty_input_is_valid_svg(caplog):
    with caplog.at_level("WARNING", logger="surgecast.report"):
        svg = render_overlay([], [], [])
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert not any(el.tag.endswith("polyline") for el in root.iter())
    assert any("no data" in rec.message for rec in caplog.records)


def test_overlay_rejects_bad_probabilities():
    lam = np.ones(5)
    labels = np.zeros(5, dtype=int)
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        render_overlay(lam, np.array([0.1, 0.2, 1.4, 0.3, 0.0]), labels)
    with pytest.raises(ValidationError):
        render_overlay(lam, np.array([0.1, np.nan, 0.2, 0.3, 0.0]), labels)


def test_overlay_byte_deterministic():
    rng = np.random.default_rng(33)
    lam = rng.gamma(3.0, 2.0, 500)
    probs = rng.random(500)
    labels = (rng.random(500) < 0.2).astype(int)
    one = render_overlay(lam, probs, labels, slices=(120, 300))
    two = render_overlay(lam, probs, labels, slices=(120, 300))
    assert one == two


def test_overlay_flat_probability_trace():
    lam = np.linspace(1.0, 9.0, 40)
    svg = render_overlay(lam, np.zeros(40), np.zeros(40, dtype=int))
    prob_line = svg_elements(svg, "prob")[0]
    ys = {pair.split(",")[1] for pair in prob_line.get("points").split()}
    assert len(ys) == 1


def test_overlay_slice_markers():
    lam = np.ones(50)
    svg = render_overlay(lam, np.zeros(50), np.zeros(50, dtype=int), slices=(10, 40))
    marks = svg_elements(svg, "slice-mark")
    assert [m.get("data-index") for m in marks] == ["10", "40"]
    with pytest.raises(ValidationError, match="outside"):
        render_overlay(lam, np.zeros(50), np.zeros(50, dtype=int), slices=(99,))


# --- phase portrait -----------------------------------------------------------


def test_phase_grid_shapes(burst_frame):
    forest = phase_fixture(burst_frame)
    m_centers, v_centers, probs = phase_grid(forest, burst_frame, grid_resolution=2)
    assert m_centers.shape == (2,) and v_centers.shape == (2,)
    assert probs.shape == (2, 2)
    assert ((probs >= 0) & (probs <= 1)).all()


def test_phase_grid_matches_direct_prediction(burst_frame):
    forest = phase_fixture(burst_frame)
    res = 6
    m_centers, v_centers, probs = phase_grid(forest, burst_frame, res)
    keep = ~burst_frame.warmup
    lam_value = float(np.median(burst_frame.lam[keep]))
    mm, vv = np.meshgrid(m_centers, v_centers)
    X = np.column_stack([np.full(mm.size, lam_value), mm.ravel(), vv.ravel()])
    assert np.array_equal(probs, predict_proba(forest, X).reshape(res, res))


def test_phase_grid_requires_both_axes(burst_frame):
    keep = ~burst_frame.warmup
    X = burst_frame.matrix(("lambda",))[keep]
    y = (X[:, 0] > np.median(X[:, 0])).astype(np.float64)
    lam_only = train_gbdt(X, y, ("lambda",), TrainingConfig(n_rounds=5, max_depth=2))
    with pytest.raises(ValidationError, match="momentum and volatility"):
        phase_grid(lam_only, burst_frame)
    with pytest.raises(ValidationError):
        phase_grid(phase_fixture(burst_frame), burst_frame, grid_resolution=0)


def test_phase_portrait_cell_count(burst_frame):
    forest = phase_fixture(burst_frame)
    svg = render_phase_portrait(forest, burst_frame, grid_resolution=5)
    assert len(svg_elements(svg, "cell")) == 25
    ET.fromstring(svg)


# --- snapshot -----------------------------------------------------------------


def test_snapshot_orders_and_scales_bars():
    svg = render_snapshot({"Unknown": 0.1, "Critical": 0.9})
    bars = svg_elements(svg, "bar")
    assert [b.get("data-stratum") for b in bars] == ["Critical", "Unknown"]
    heights = [float(b.get("height")) for b in bars]
    assert heights[0] / heights[1] == pytest.approx(9.0, abs=1e-9)


def test_snapshot_validation():
    with pytest.raises(ValidationError, match="at least one"):
        render_snapshot({})
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        render_snapshot({"Critical": 1.4})


# --- html assembly ------------------------------------------------------------


def test_bundle_is_valid_and_self_contained(burst_frame):
    forest = phase_fixture(burst_frame)
    bundle = ReportBundle("surge report", metadata={"stratum": "Critical"})
    lam = burst_frame.lam[:100]
    bundle.add("overlay", render_overlay(lam, np.zeros(100), np.zeros(100, dtype=int)))
    bundle.add("portrait", render_phase_portrait(forest, burst_frame, 4))
    bundle.add("snapshot", render_snapshot({"Critical": 0.5}))
    html = bundle_to_html(bundle)
    ET.fromstring(html)
    for token in ("<script", "<link", "src=", "href="):
        assert token not in html
    assert "surge report" in html
    assert bundle_to_html(bundle) == html


def test_bundle_rejects_malformed_svg():
    bundle = ReportBundle("broken")
    with pytest.raises(ET.ParseError):
        bundle.add("bad", "<svg><rect</svg>")
