"""Static SVG report panels, assembled into one self-contained HTML file.

Everything is written by hand as SVG strings: identical inputs must produce
byte-identical output, so no plotting library is involved. Colors keep
monotone luminance (dark trace vs light shading, sequential fill ramp), so
panels survive grayscale reproduction.

Panels:

* overlay          normalized intensity + predicted probability over time,
                   shaded extreme-regime intervals, dashed slice markers
* phase portrait   model decision surface over (momentum, volatility) with
                   intensity held fixed, observed minutes scattered on top
* snapshot         per-stratum probability bars at one time slice
"""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError
from .features import FeatureFrame
from .ingest import STRATUM_ORDER
from .model import TrainedForest, predict_proba

logger = logging.getLogger(__name__)

_FONT = 'font-family="monospace" font-size="11"'
_MAX_TRACE_POINTS = 4000
_MAX_SCATTER_POINTS = 3000


def _n(value: float) -> str:
    """Fixed 3-decimal coordinate formatting keeps output deterministic."""
    return f"{float(value):.3f}"


def _ramp(p: float) -> str:
    """Sequential light-to-dark fill; luminance falls monotonically with p."""
    p = min(max(float(p), 0.0), 1.0)
    r = round(247 + (22 - 247) * p)
    g = round(249 + (48 - 249) * p)
    b = round(252 + (92 - 252) * p)
    return f"rgb({r},{g},{b})"


def label_runs(labels) -> list[tuple[int, int]]:
    """Maximal runs of y == 1 as half-open [start, end) index pairs."""
    arr = np.asarray(labels).astype(bool)
    if arr.ndim != 1:
        raise ValidationError("labels must be 1-D")
    padded = np.concatenate(([False], arr, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def _check_probs(probs: np.ndarray, what: str) -> None:
    if probs.size and (not np.isfinite(probs).all() or (probs < 0).any() or (probs > 1).any()):
        raise ValidationError(f"{what} must lie in [0, 1]")


def _stride_indices(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    stride = int(np.ceil(n / cap))
    idx = np.arange(0, n, stride)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def render_overlay(lam, probs, labels, slices=(), norm_max: float | None = None,
                   title: str = "intensity and predicted probability",
                   index_offset: int = 0) -> str:
    """Overlay panel; intensity normalized by ``norm_max`` (training-region
    max in the pipeline). Shaded rects are exactly the maximal runs of
    y == 1; each carries data-start/data-end minute indexes."""
    lam = np.asarray(lam, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if lam.ndim != 1 or probs.shape != lam.shape:
        raise ValidationError("lam and probs must be aligned 1-D arrays")
    _check_probs(probs, "probabilities")
    n = lam.size
    runs = label_runs(labels) if n else []

    width, height = 880.0, 260.0
    ml, mr, mt, mb = 46.0, 12.0, 26.0, 30.0
    pw, ph = width - ml - mr, height - mt - mb
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
        f'viewBox="0 0 {width:g} {height:g}" role="img">',
        f'<text x="{_n(ml)}" y="16" {_FONT}>{escape(title)}</text>',
        f'<rect x="{_n(ml)}" y="{_n(mt)}" width="{_n(pw)}" height="{_n(ph)}" '
        f'fill="none" stroke="#888" stroke-width="1"/>',
    ]
    if n == 0:
        logger.warning("overlay rendered with no data")
        parts.append(
            f'<text x="{_n(ml + pw / 2 - 30)}" y="{_n(mt + ph / 2)}" {_FONT}>no data</text>'
        )
        parts.append("</svg>")
        return "\n".join(parts)

    if norm_max is None:
        norm_max = float(lam.max())
    if norm_max <= 0:
        norm_max = 1.0
    norm = lam / norm_max
    ymax = max(1.0, float(norm.max()))
    step = pw / (n - 1) if n > 1 else 0.0

    def x(i: float) -> float:
        return ml + i * step if n > 1 else ml + pw / 2

    def y(v: float) -> float:
        return mt + ph - (v / ymax) * ph

    for start, end in runs:
        parts.append(
            f'<rect class="extreme" data-start="{start + index_offset}" '
            f'data-end="{end + index_offset}" x="{_n(x(start))}" y="{_n(mt)}" '
            f'width="{_n(max(x(end) - x(start), 0.75))}" height="{_n(ph)}" '
            f'fill="#c8c8c8" fill-opacity="0.5"/>'
        )
    idx = _stride_indices(n, _MAX_TRACE_POINTS)
    lam_pts = " ".join(f"{_n(x(i))},{_n(y(norm[i]))}" for i in idx)
    prob_pts = " ".join(f"{_n(x(i))},{_n(y(probs[i]))}" for i in idx)
    parts.append(
        f'<polyline class="lambda" points="{lam_pts}" fill="none" '
        f'stroke="#111" stroke-width="1"/>'
    )
    parts.append(
        f'<polyline class="prob" points="{prob_pts}" fill="none" '
        f'stroke="#4477aa" stroke-width="1.2" stroke-dasharray="5 3"/>'
    )
    for i, slice_idx in enumerate(slices):
        local = int(slice_idx) - index_offset
        if not 0 <= local < n:
            raise ValidationError(f"slice index {slice_idx} outside the rendered range")
        parts.append(
            f'<line class="slice-mark" data-index="{int(slice_idx)}" '
            f'x1="{_n(x(local))}" y1="{_n(mt)}" x2="{_n(x(local))}" y2="{_n(mt + ph)}" '
            f'stroke="#333" stroke-width="1" stroke-dasharray="2 3"/>'
        )
        parts.append(
            f'<text x="{_n(x(local) + 3)}" y="{_n(mt + 12 + 12 * i)}" {_FONT}>'
            f"s{i}</text>"
        )
    for frac in (0.0, 0.5, 1.0):
        yy = y(frac * ymax)
        parts.append(
            f'<text x="4" y="{_n(yy + 4)}" {_FONT}>{frac * ymax:.2f}</text>'
        )
        parts.append(
            f'<line x1="{_n(ml - 3)}" y1="{_n(yy)}" x2="{_n(ml)}" y2="{_n(yy)}" '
            f'stroke="#888" stroke-width="1"/>'
        )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        i = round(frac * (n - 1))
        parts.append(
            f'<text x="{_n(x(i) - 8)}" y="{_n(height - 10)}" {_FONT}>'
            f"{i + index_offset}</text>"
        )
    parts.append(
        f'<text x="{_n(width - 330)}" y="16" {_FONT}>'
        "solid: lambda/max(train)  dashed: P(extreme)</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts)


def phase_grid(forest: TrainedForest, frame: FeatureFrame, grid_resolution: int = 48,
               lam_value: float | None = None):
    """Cell centers and predicted probabilities for the phase portrait.

    Returns (m_centers, v_centers, probs[res, res]) with rows indexed by
    volatility and columns by momentum.
    """
    if grid_resolution < 1:
        raise ValidationError("grid_resolution must be >= 1")
    schema = forest.feature_schema
    if "momentum" not in schema or "volatility" not in schema:
        raise ValidationError(
            "phase portrait needs a model trained on momentum and volatility"
        )
    keep = ~frame.warmup
    if not keep.any():
        raise ValidationError("frame is entirely warm-up; nothing to portray")
    m_vals = frame.mom[keep]
    v_vals = frame.vol[keep]
    if lam_value is None:
        lam_value = float(np.median(frame.lam[keep]))

    def centers(lo: float, hi: float) -> np.ndarray:
        if hi <= lo:
            hi = lo + 1.0
        pad = 0.02 * (hi - lo)
        lo, hi = lo - pad, hi + pad
        edges = np.linspace(lo, hi, grid_resolution + 1)
        return (edges[:-1] + edges[1:]) / 2.0

    m_centers = centers(float(m_vals.min()), float(m_vals.max()))
    v_centers = centers(float(v_vals.min()), float(v_vals.max()))
    mm, vv = np.meshgrid(m_centers, v_centers)
    columns = {"lambda": np.full(mm.size, lam_value), "momentum": mm.ravel(),
               "volatility": vv.ravel()}
    X = np.column_stack([columns[name] for name in schema])
    probs = predict_proba(forest, X).reshape(grid_resolution, grid_resolution)
    return m_centers, v_centers, probs


def render_phase_portrait(forest: TrainedForest, frame: FeatureFrame,
                          grid_resolution: int = 48,
                          lam_value: float | None = None,
                          title: str = "decision surface") -> str:
    """Probability-shaded (momentum, volatility) grid with observed minutes."""
    m_centers, v_centers, probs = phase_grid(forest, frame, grid_resolution, lam_value)
    res = grid_resolution
    keep = ~frame.warmup
    m_vals = frame.mom[keep]
    v_vals = frame.vol[keep]

    width, height = 430.0, 430.0
    ml, mr, mt, mb = 52.0, 14.0, 26.0, 40.0
    pw, ph = width - ml - mr, height - mt - mb
    m_lo = m_centers[0] - (m_centers[1] - m_centers[0]) / 2 if res > 1 else m_centers[0] - 0.5
    m_hi = m_centers[-1] + (m_centers[1] - m_centers[0]) / 2 if res > 1 else m_centers[0] + 0.5
    v_lo = v_centers[0] - (v_centers[1] - v_centers[0]) / 2 if res > 1 else v_centers[0] - 0.5
    v_hi = v_centers[-1] + (v_centers[1] - v_centers[0]) / 2 if res > 1 else v_centers[0] + 0.5

    def x(m: float) -> float:
        return ml + (m - m_lo) / (m_hi - m_lo) * pw

    def y(v: float) -> float:
        return mt + ph - (v - v_lo) / (v_hi - v_lo) * ph

    cell_w = pw / res
    cell_h = ph / res
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
        f'viewBox="0 0 {width:g} {height:g}" role="img">',
        f'<text x="{_n(ml)}" y="16" {_FONT}>{escape(title)}</text>',
    ]
    for row in range(res):
        for col in range(res):
            parts.append(
                f'<rect class="cell" x="{_n(ml + col * cell_w)}" '
                f'y="{_n(mt + (res - 1 - row) * cell_h)}" width="{_n(cell_w)}" '
                f'height="{_n(cell_h)}" fill="{_ramp(probs[row, col])}"/>'
            )
    idx = _stride_indices(m_vals.size, _MAX_SCATTER_POINTS)
    for i in idx:
        parts.append(
            f'<circle cx="{_n(x(m_vals[i]))}" cy="{_n(y(v_vals[i]))}" r="1.4" '
            f'fill="#111" fill-opacity="0.45"/>'
        )
    parts.append(
        f'<rect x="{_n(ml)}" y="{_n(mt)}" width="{_n(pw)}" height="{_n(ph)}" '
        f'fill="none" stroke="#888" stroke-width="1"/>'
    )
    for frac in (0.0, 0.5, 1.0):
        mv = m_lo + frac * (m_hi - m_lo)
        vv_ = v_lo + frac * (v_hi - v_lo)
        parts.append(
            f'<text x="{_n(x(mv) - 12)}" y="{_n(height - 22)}" {_FONT}>{mv:.2f}</text>'
        )
        parts.append(
            f'<text x="4" y="{_n(y(vv_) + 4)}" {_FONT}>{vv_:.2f}</text>'
        )
    parts.append(
        f'<text x="{_n(ml + pw / 2 - 34)}" y="{_n(height - 6)}" {_FONT}>momentum</text>'
    )
    parts.append(
        f'<text x="14" y="{_n(mt - 8)}" {_FONT}>volatility</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts)


def render_snapshot(probs_by_stratum: dict[str, float],
                    title: str = "snapshot") -> str:
    """Per-stratum probability bars in the fixed stratum order."""
    names = [name for name in STRATUM_ORDER if name in probs_by_stratum]
    if not names:
        raise ValidationError("snapshot needs at least one stratum")
    values = np.asarray([probs_by_stratum[name] for name in names], dtype=np.float64)
    _check_probs(values, "snapshot probabilities")

    width, height = 520.0, 250.0
    ml, mr, mt, mb = 46.0, 14.0, 26.0, 44.0
    pw, ph = width - ml - mr, height - mt - mb
    slot = pw / len(names)
    bar_w = slot * 0.6
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
        f'viewBox="0 0 {width:g} {height:g}" role="img">',
        f'<text x="{_n(ml)}" y="16" {_FONT}>{escape(title)}</text>',
        f'<rect x="{_n(ml)}" y="{_n(mt)}" width="{_n(pw)}" height="{_n(ph)}" '
        f'fill="none" stroke="#888" stroke-width="1"/>',
    ]
    for i, name in enumerate(names):
        v = float(values[i])
        bx = ml + i * slot + (slot - bar_w) / 2
        bh = v * ph
        parts.append(
            f'<rect class="bar" data-stratum="{escape(name)}" x="{_n(bx)}" '
            f'y="{_n(mt + ph - bh)}" width="{_n(bar_w)}" height="{_n(bh)}" '
            f'fill="{_ramp(v)}" stroke="#333" stroke-width="0.8"/>'
        )
        parts.append(
            f'<text x="{_n(bx)}" y="{_n(mt + ph - bh - 4)}" {_FONT}>{v:.4f}</text>'
        )
        parts.append(
            f'<text x="{_n(ml + i * slot + 4)}" y="{_n(height - 26)}" {_FONT}>'
            f"{escape(name[:7])}</text>"
        )
    for frac in (0.0, 0.5, 1.0):
        yy = mt + ph - frac * ph
        parts.append(f'<text x="8" y="{_n(yy + 4)}" {_FONT}>{frac:.1f}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


@dataclass
class ReportBundle:
    title: str
    metadata: dict[str, str] = field(default_factory=dict)
    sections: list[tuple[str, str]] = field(default_factory=list)

    def add(self, heading: str, svg: str) -> None:
        ET.fromstring(svg)  # well-formedness is checked at assembly time
        self.sections.append((heading, svg))


def bundle_to_html(bundle: ReportBundle) -> str:
    """Assemble the final self-contained XHTML report (validated)."""
    parts = [
        '<html xmlns="http://www.w3.org/1999/xhtml">',
        "<head>",
        '<meta charset="utf-8"/>',
        f"<title>{escape(bundle.title)}</title>",
        "<style>body{font-family:monospace;margin:24px;background:#fff;color:#111}"
        "h1{font-size:18px}h2{font-size:14px;margin-top:28px}"
        "dl{font-size:12px}dt{font-weight:bold;float:left;clear:left;width:180px}"
        "dd{margin-left:190px}</style>",
        "</head>",
        "<body>",
        f"<h1>{escape(bundle.title)}</h1>",
        "<dl>",
    ]
    for key, value in bundle.metadata.items():
        parts.append(f"<dt>{escape(key)}</dt><dd>{escape(value)}</dd>")
    parts.append("</dl>")
    for heading, svg in bundle.sections:
        parts.append(f"<h2>{escape(heading)}</h2>")
        parts.append(svg)
    parts.append("</body>")
    parts.append("</html>")
    html = "\n".join(parts)
    ET.fromstring(html)
    return html
