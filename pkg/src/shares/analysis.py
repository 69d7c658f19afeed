"""Reading quantitative information off fitted shape functions."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .datasets import WATER, WaterConstants
from .errors import NoSegments, PatternMismatch, UnknownShape


@dataclass(frozen=True)
class ShapeTrace:
    shape_id: int
    xs: np.ndarray
    ys: np.ndarray
    input_range: tuple

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        ys = np.asarray(self.ys, dtype=np.float64)
        if xs.shape != ys.shape or xs.size < 2:
            raise ValueError("a trace needs at least two (x, y) points")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("trace xs must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)


def sample_shape(model, shape_id: int, n_points: int = 400, input_range=None) -> ShapeTrace:
    """Evaluate shape `shape_id` of a fitted model on a uniform grid over the
    range its argument took on the training data."""
    if not 0 <= shape_id < model.n_shapes:
        raise UnknownShape(f"model has no shape with id {shape_id} ({model.n_shapes} shapes)")
    lo, hi = input_range or model.shapes[shape_id].input_range or (None, None)
    if lo is None:
        raise UnknownShape(f"input range of shape {shape_id} is unknown; fit the model first")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if hi <= lo:
        hi = lo + 1.0
    xs = np.linspace(lo, hi, n_points)
    return ShapeTrace(shape_id, xs, model.eval_shape(shape_id, xs), (lo, hi))


def trace_from_function(fn, lo, hi, n_points=2001, shape_id=0) -> ShapeTrace:
    xs = np.linspace(lo, hi, n_points)
    return ShapeTrace(shape_id, xs, np.asarray(fn(xs), dtype=np.float64), (lo, hi))


def water_curve(z, k: WaterConstants = WATER):
    """Temperature against energy per gram measured from ice at 0 degC.

    Negative `z` is ice below zero; this is the curve an ideal fit of the
    outer shape in ``s(E/m + s'(t0))`` takes, up to a horizontal shift.
    """
    z = np.asarray(z, dtype=np.float64)
    melt_end = k.L_fusion
    water_end = melt_end + 100.0 * k.c_water
    boil_end = water_end + k.L_vapor
    return np.select(
        [z <= 0.0, z <= melt_end, z <= water_end, z <= boil_end],
        [z / k.c_ice, 0.0, (z - melt_end) / k.c_water, 100.0],
        100.0 + (z - boil_end) / k.c_steam,
    )


# ---------------------------------------------------------------------------
# Line fitting and segmentation


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    max_abs_residual: float


def _lstsq(xs, ys):
    xm = xs.mean()
    ym = ys.mean()
    dx = xs - xm
    sxx = float(np.dot(dx, dx))
    slope = float(np.dot(dx, ys - ym)) / sxx if sxx > 0 else 0.0
    return slope, float(ym - slope * xm)


def fit_line(trace) -> LineFit:
    """Ordinary least squares line through a trace (or an ``(xs, ys)`` pair)."""
    xs, ys = (trace.xs, trace.ys) if isinstance(trace, ShapeTrace) else map(np.asarray, trace)
    slope, intercept = _lstsq(np.asarray(xs, float), np.asarray(ys, float))
    resid = np.abs(ys - (slope * xs + intercept))
    return LineFit(slope, intercept, float(resid.max()))


@dataclass(frozen=True)
class Segment:
    kind: str  # "Rising" or "Plateau"
    x_start: float
    x_end: float
    slope: float
    level: float | None = None

    @property
    def width(self) -> float:
        return self.x_end - self.x_start


@dataclass(frozen=True)
class SegmentDecomposition:
    segments: tuple

    @property
    def pattern(self) -> str:
        return "".join(s.kind[0] for s in self.segments)


def _runs(labels):
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append([labels[start], start, i - 1])
            start = i
    return runs


def _merge_short(labels, min_width):
    labels = list(labels)
    while True:
        runs = _runs(labels)
        if len(runs) == 1:
            return runs
        short = [r for r in runs if r[2] - r[1] + 1 < min_width]
        if not short:
            return runs
        lab, a, b = min(short, key=lambda r: (r[2] - r[1], r[1]))
        flip = "P" if lab == "R" else "R"
        for i in range(a, b + 1):
            labels[i] = flip


def detect_segments(trace: ShapeTrace, plateau_slope_threshold: float = 0.1,
                    min_segment_width: int = 5, edge_trim: float = 0.25) -> SegmentDecomposition:
    """Split a trace into rising linear pieces and plateaus.

    Every interval between neighbouring grid points is labelled by its
    finite-difference slope; runs shorter than `min_segment_width` intervals
    are absorbed by their neighbours. Each run gets a least-squares line
    fitted to its interior (the outer `edge_trim` fraction of the run, and
    at least one interval, is dropped at both ends, since fitted curves round
    off near kinks and near the edge of the data) and segment boundaries are
    placed where neighbouring lines intersect.
    """
    xs, ys = trace.xs, trace.ys
    n_int = xs.size - 1
    if n_int < min_segment_width:
        raise NoSegments(f"trace has {n_int} intervals, fewer than min_segment_width={min_segment_width}")
    slopes = np.diff(ys) / np.diff(xs)
    labels = ["P" if abs(s) <= plateau_slope_threshold else "R" for s in slopes]
    runs = _merge_short(labels, min_segment_width)

    fits = []
    for j, (lab, a, b) in enumerate(runs):
        length = b - a + 1
        cut = max(1, int(math.floor(edge_trim * length)))
        lo = a + cut
        hi = b - cut
        if hi < lo:
            lo = hi = (a + b) // 2
        px = xs[lo:hi + 2]
        py = ys[lo:hi + 2]
        slope, icpt = _lstsq(px, py)
        fits.append((lab, slope, icpt, float(py.mean())))

    bounds = [float(xs[0])]
    for j in range(len(runs) - 1):
        _, s1, b1, _ = fits[j]
        _, s2, b2, _ = fits[j + 1]
        edge = float(xs[runs[j][2] + 1])
        left = float(xs[runs[j][1]])
        right = float(xs[runs[j + 1][2] + 1])
        x = edge
        if s1 != s2:
            cand = (b2 - b1) / (s1 - s2)
            if left <= cand <= right:
                x = cand
        bounds.append(max(x, bounds[-1]))
    bounds.append(float(xs[-1]))

    segs = []
    for j, (lab, slope, icpt, mean) in enumerate(fits):
        if lab == "R":
            segs.append(Segment("Rising", bounds[j], bounds[j + 1], slope))
        else:
            segs.append(Segment("Plateau", bounds[j], bounds[j + 1], slope, mean))
    return SegmentDecomposition(tuple(segs))


@dataclass(frozen=True)
class WaterPropertyEstimate:
    c_ice: float
    c_water: float
    c_steam: float
    L_fusion: float
    L_vapor: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("c_ice", "c_water", "c_steam", "L_fusion", "L_vapor")}

    def relative_errors(self, truth: WaterConstants = WATER) -> dict:
        return {k: (v - getattr(truth, k)) / getattr(truth, k) for k, v in self.as_dict().items()}


def extract_water_properties(dec: SegmentDecomposition) -> WaterPropertyEstimate:
    """Heat capacities are inverse slopes of the three rising parts (ice,
    water, steam); latent heats are the widths of the two plateaus. Assumes
    the trace's x axis is energy per gram (cal/g) and y is degC."""
    if dec.pattern != "RPRPR":
        raise PatternMismatch(dec.pattern)
    r1, p1, r2, p2, r3 = dec.segments
    return WaterPropertyEstimate(
        c_ice=1.0 / r1.slope,
        c_water=1.0 / r2.slope,
        c_steam=1.0 / r3.slope,
        L_fusion=p1.width,
        L_vapor=p2.width,
    )


# ---------------------------------------------------------------------------
# Output


def trace_to_csv(trace: ShapeTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y\n")
        for x, y in zip(trace.xs, trace.ys):
            fh.write(f"{x:.17g},{y:.17g}\n")


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _num(v):
    return f"{v:.2f}"


def _tick_label(v):
    return f"{v:.6g}"


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def svg_document(traces, labels=None, title=None, width=640, height=420) -> str:
    """Line chart with axes, ticks and a legend; output depends only on input."""
    traces = list(traces)
    if not traces:
        raise ValueError("at least one trace is required")
    labels = list(labels) if labels is not None else [f"s{t.shape_id + 1}" for t in traces]
    ml, mr, mt, mb = 64, 150, 36 if title else 20, 44
    pw, ph = width - ml - mr, height - mt - mb
    x_lo = min(float(t.xs.min()) for t in traces)
    x_hi = max(float(t.xs.max()) for t in traces)
    y_lo = min(float(t.ys.min()) for t in traces)
    y_hi = max(float(t.ys.max()) for t in traces)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{_num(ml + pw / 2)}" y="22" font-family="sans-serif" font-size="14" '
                   f'text-anchor="middle">{escape(title)}</text>')
    out.append(f'<g stroke="black" stroke-width="1">'
               f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}"/>'
               f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}"/></g>')
    out.append('<g font-family="sans-serif" font-size="11">')
    for t in _nice_ticks(x_lo, x_hi):
        if x_lo <= t <= x_hi:
            x = _num(sx(t))
            out.append(f'<line x1="{x}" y1="{mt + ph}" x2="{x}" y2="{mt + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{x}" y="{mt + ph + 18}" text-anchor="middle">{_tick_label(t)}</text>')
    for t in _nice_ticks(y_lo, y_hi):
        if y_lo <= t <= y_hi:
            y = _num(sy(t))
            out.append(f'<line x1="{ml - 5}" y1="{y}" x2="{ml}" y2="{y}" stroke="black"/>')
            out.append(f'<text x="{ml - 8}" y="{_num(sy(t) + 4)}" text-anchor="end">{_tick_label(t)}</text>')
    out.append("</g>")
    for i, t in enumerate(traces):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in zip(t.xs, t.ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    out.append('<g font-family="sans-serif" font-size="12">')
    for i, lab in enumerate(labels):
        color = _COLORS[i % len(_COLORS)]
        y = mt + 10 + 18 * i
        lx = ml + pw + 14
        out.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 22}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28}" y="{y + 4}">{escape(str(lab))}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_svg(traces, labels=None, path=None, title=None) -> str:
    """Write an SVG chart of `traces` to `path`; nothing is written on error."""
    doc = svg_document(traces, labels, title)
    if path is not None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(doc)
        os.replace(tmp, path)
    return doc
