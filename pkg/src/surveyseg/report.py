"""Presentation artifacts: cluster profiles, text tables and hand-written SVG charts.

Every chart is emitted as SVG 1.1 text built from fixed-precision numbers, a
fixed palette and a fixed element order, so identical inputs always give
identical bytes. Each ChartSpec also renders its series as CSV.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import EmptyTable, LengthMismatch, NonMonotoneCurve, SurveySegError, TooFewPoints
from .inference import ContingencyTable
from .ingest import ColumnSchema, Dataset

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
ORIENTATIONS = ("vertical", "horizontal")


def percent_text(numerator, denominator, places: int = 2) -> str:
    """``100 * numerator / denominator`` rounded half-up, e.g. ``"71.65%"``."""
    if denominator == 0:
        raise EmptyTable("percent of an empty total")
    value = Decimal(int(numerator)) * 100 / Decimal(int(denominator))
    q = Decimal(1).scaleb(-places)
    return f"{value.quantize(q, rounding=ROUND_HALF_UP)}%"


def proportion_percent(p: float, places: int = 0) -> str:
    value = Decimal(repr(float(p))) * 100
    return f"{value.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)}%"


# ---------------------------------------------------------------- profiles


@dataclass
class ClusterProfile:
    cluster: int
    size: int
    distributions: dict[str, dict[int, float]]  # categorical: code -> proportion
    counts: dict[str, dict[int, int]]
    means: dict[str, float]  # numeric variables
    majority: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "cluster": self.cluster,
            "size": self.size,
            "distributions": {v: {str(c): p for c, p in d.items()} for v, d in self.distributions.items()},
            "means": self.means,
            "majority": self.majority,
        }


def cluster_profiles(data: Dataset, assignments, variables: Sequence[str]) -> list[ClusterProfile]:
    """Per-cluster code distributions, numeric means and majority codes.

    Missing cells are left out of that variable's tally. Codes are listed in
    schema order; the majority tie-break is the smallest code.
    """
    assignments = np.asarray(assignments, dtype=np.intp)
    if len(assignments) != data.n_rows:
        raise LengthMismatch(f"{len(assignments)} assignments for {data.n_rows} rows")
    cols = [data.column_schema(v) for v in variables]
    profiles = []
    for l in np.unique(assignments):
        rows = assignments == l
        dist, counts, means, majority = {}, {}, {}, {}
        for col in cols:
            ok = rows & ~data.missing(col.name)
            v = data.column(col.name)[ok]
            if col.is_categorical:
                c = {code: int((v == code).sum()) for code in col.codes}
                total = sum(c.values())
                counts[col.name] = c
                dist[col.name] = {code: (cnt / total if total else 0.0) for code, cnt in c.items()}
                if total:
                    best = max(c.values())
                    majority[col.name] = min(code for code, cnt in c.items() if cnt == best)
            else:
                means[col.name] = float(v.mean()) if len(v) else float("nan")
        profiles.append(ClusterProfile(int(l), int(rows.sum()), dist, counts, means, majority))
    return profiles


def typical_member_table(profiles: Sequence[ClusterProfile], schema: Sequence[ColumnSchema]) -> str:
    """One line per cluster: size, then ``code (label) (NN%)`` for each majority code."""
    if not profiles:
        raise SurveySegError("no profiles to tabulate")
    lookup = {c.name: c for c in schema}
    variables = list(profiles[0].majority)
    header = ["Cluster", "Size", *variables]
    lines = [" | ".join(header)]
    for prof in profiles:
        cells = [str(prof.cluster), str(prof.size)]
        for v in variables:
            code = prof.majority[v]
            col = lookup.get(v)
            label = col.label(code) if col else str(code)
            n = prof.counts[v][code]
            total = sum(prof.counts[v].values())
            cells.append(f"{code} ({label}) ({percent_text(n, total, 0)})")
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"


_CELL = re.compile(r"^(-?\d+) \(.*\) \((\d+)%\)$")


def parse_typical_member_table(text: str) -> list[dict]:
    """Inverse of :func:`typical_member_table` for the cluster, size and majority codes."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(" | ")
    out = []
    for ln in lines[1:]:
        cells = ln.split(" | ")
        majority = {}
        for name, cell in zip(header[2:], cells[2:]):
            m = _CELL.match(cell)
            if not m:
                raise SurveySegError(f"cannot parse cell {cell!r}")
            majority[name] = int(m.group(1))
        out.append({"cluster": int(cells[0]), "size": int(cells[1]), "majority": majority})
    return out


# ---------------------------------------------------------------- charts


@dataclass
class ChartSpec:
    kind: str  # segmented_bar | elbow | scatter
    series: list[dict]
    x_label: str
    y_label: str
    title: str = ""
    path: str | None = None
    annotations: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("segmented_bar", "elbow", "scatter"):
            raise SurveySegError(f"unknown chart kind {self.kind!r}")
        if not self.series:
            raise SurveySegError("chart series must be non-empty")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.kind == "segmented_bar":
            cats = self.annotations["categories"]
            w.writerow(["bar", *(f"{c} count" for c in cats), *(f"{c} proportion" for c in cats)])
            for s in self.series:
                w.writerow([s["label"], *s["counts"], *(repr(p) for p in s["proportions"])])
        elif self.kind == "elbow":
            w.writerow(["k", "cost"])
            for s in self.series:
                w.writerow([s["k"], repr(float(s["cost"]))])
        else:
            w.writerow(["row_id", "x", "y", "cluster"])
            for s in self.series:
                w.writerow([s["row_id"], repr(s["x"]), repr(s["y"]), s["cluster"]])
        return buf.getvalue()


def _f(x: float) -> str:
    return f"{x:.2f}"


class _Svg:
    def __init__(self, width: int, height: int, title: str):
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="12">',
            f"<title>{escape(title)}</title>",
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" stroke="{stroke}" '
            f'stroke-width="{_f(width)}"{extra}/>'
        )

    def text(self, x, y, s, anchor="middle", size=12, rotate=None, weight=None):
        extra = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        if weight:
            extra += f' font-weight="{weight}"'
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" font-size="{size}"{extra}>{escape(str(s))}</text>'
        )

    def circle(self, x, y, r, fill, stroke="none"):
        self.parts.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{fill}" stroke="{stroke}"/>')

    def polyline(self, pts, stroke, width=2.0):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{_f(width)}"/>'
        )

    def cross(self, x, y, r, stroke, width=3.0):
        self.line(x - r, y - r, x + r, y + r, stroke, width)
        self.line(x - r, y + r, x + r, y - r, stroke, width)

    def bytes(self) -> bytes:
        return ("\n".join(self.parts + ["</svg>"]) + "\n").encode("utf-8")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(float(round(t, 10)))
        t += step
    return ticks


def _tick_label(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else f"{t:g}"


def segmented_bar(table: ContingencyTable, orientation: str = "vertical", title: str = ""):
    """One stacked bar per row category plus an ``Overall`` bar of the column margins."""
    if orientation not in ORIENTATIONS:
        raise SurveySegError(f"orientation must be one of {ORIENTATIONS}")
    obs = table.observed
    if table.total == 0 or (obs.sum(axis=1) == 0).any():
        raise EmptyTable("segmented bars need every row to have a positive total")
    bars = [(lab, obs[i]) for i, lab in enumerate(table.row_labels)] + [("Overall", obs.sum(axis=0))]
    series = []
    for lab, counts in bars:
        total = int(counts.sum())
        series.append(
            {
                "label": lab,
                "counts": [int(c) for c in counts],
                "proportions": [int(c) / total for c in counts],
                "percents": [percent_text(c, total) for c in counts],
            }
        )
    spec = ChartSpec(
        "segmented_bar",
        series,
        x_label="Group" if orientation == "vertical" else "Proportion",
        y_label="Proportion" if orientation == "vertical" else "Group",
        title=title,
        annotations={"categories": list(table.col_labels), "orientation": orientation},
    )
    return spec, _render_bars(spec)


def _render_bars(spec: ChartSpec) -> bytes:
    cats = spec.annotations["categories"]
    vertical = spec.annotations["orientation"] == "vertical"
    nb = len(spec.series)
    width, height = 640, 420
    left, top, right, bottom = 70, 50, 170, 60
    pw, ph = width - left - right, height - top - bottom
    svg = _Svg(width, height, spec.title or "Segmented bar chart")
    if spec.title:
        svg.text(width / 2, 28, spec.title, size=15, weight="bold")
    band = (pw if vertical else ph) / nb
    thick = band * 0.6
    for i, s in enumerate(spec.series):
        offset = 0.0
        for j, p in enumerate(s["proportions"]):
            colour = PALETTE[j % len(PALETTE)]
            if vertical:
                x = left + i * band + (band - thick) / 2
                h = p * ph
                y = top + ph - offset * ph - h
                svg.rect(x, y, thick, h, colour, "#ffffff")
                if p >= 0.06:
                    svg.text(x + thick / 2, y + h / 2 + 4, s["percents"][j], size=11)
            else:
                y = top + i * band + (band - thick) / 2
                x = left + offset * pw
                w = p * pw
                svg.rect(x, y, w, thick, colour, "#ffffff")
                if p >= 0.08:
                    svg.text(x + w / 2, y + thick / 2 + 4, s["percents"][j], size=11)
            offset += p
        if vertical:
            svg.text(left + i * band + band / 2, top + ph + 18, s["label"])
        else:
            svg.text(left - 6, top + i * band + band / 2 + 4, s["label"], anchor="end")
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        if vertical:
            y = top + ph - t * ph
            svg.line(left - 4, y, left, y)
            svg.text(left - 8, y + 4, _tick_label(t), anchor="end", size=10)
        else:
            x = left + t * pw
            svg.line(x, top + ph, x, top + ph + 4)
            svg.text(x, top + ph + 16, _tick_label(t), size=10)
    svg.line(left, top, left, top + ph)
    svg.line(left, top + ph, left + pw, top + ph)
    if vertical:
        svg.text(18, top + ph / 2, spec.y_label, rotate=-90)
        svg.text(left + pw / 2, height - 14, spec.x_label)
    else:
        svg.text(left + pw / 2, height - 14, spec.x_label)
    for j, c in enumerate(cats):
        ly = top + 10 + j * 22
        svg.rect(width - right + 16, ly - 10, 14, 14, PALETTE[j % len(PALETTE)])
        svg.text(width - right + 36, ly + 1, c, anchor="start", size=11)
    return svg.bytes()


def knee_point(ks: Sequence[int], costs: Sequence[float]):
    """(k, score) maximising the second difference ``c[i-1] - 2c[i] + c[i+1]``.

    Interior points only; the earliest k wins ties. Returns None for fewer
    than three points.
    """
    c = np.asarray(costs, dtype=float)
    if len(c) < 3:
        return None
    second = c[:-2] - 2.0 * c[1:-1] + c[2:]
    i = int(np.argmax(second))
    return int(ks[i + 1]), float(second[i])


def elbow_chart(points: Sequence[tuple[int, float]], title: str = "", y_label: str = "Clustering cost"):
    if len(points) < 2:
        raise TooFewPoints("an elbow chart needs at least two (k, cost) points")
    ks = [int(k) for k, _ in points]
    costs = [float(c) for _, c in points]
    for a, b in zip(ks, ks[1:]):
        if b <= a:
            raise SurveySegError(f"k values must be strictly increasing (k={b} follows k={a})")
    for (ka, ca), (kb, cb) in zip(zip(ks, costs), zip(ks[1:], costs[1:])):
        if cb > ca:
            raise NonMonotoneCurve(f"cost rises at k={kb} ({cb:g} > {ca:g} at k={ka})")
    knee = knee_point(ks, costs)
    spec = ChartSpec(
        "elbow",
        [{"k": k, "cost": c} for k, c in zip(ks, costs)],
        x_label="Number of clusters (k)",
        y_label=y_label,
        title=title,
        annotations={"knee": None if knee is None else {"k": knee[0], "score": knee[1]}},
    )
    return spec, _render_elbow(spec)


def _render_elbow(spec: ChartSpec) -> bytes:
    width, height = 640, 420
    left, top, right, bottom = 80, 50, 30, 60
    pw, ph = width - left - right, height - top - bottom
    ks = [s["k"] for s in spec.series]
    costs = [s["cost"] for s in spec.series]
    k0, k1 = min(ks), max(ks)
    cmin, cmax = min(costs), max(costs)
    ticks = _nice_ticks(min(0.0, cmin), cmax)
    ylo, yhi = min(ticks[0], cmin), max(ticks[-1], cmax)
    if yhi == ylo:
        yhi = ylo + 1.0

    def sx(k):
        return left + (pw * (k - k0) / (k1 - k0) if k1 > k0 else pw / 2)

    def sy(c):
        return top + ph - ph * (c - ylo) / (yhi - ylo)

    svg = _Svg(width, height, spec.title or "Cost versus number of clusters")
    if spec.title:
        svg.text(width / 2, 28, spec.title, size=15, weight="bold")
    for t in ticks:
        svg.line(left, sy(t), left + pw, sy(t), "#dddddd")
        svg.text(left - 8, sy(t) + 4, _tick_label(t), anchor="end", size=10)
    svg.line(left, top, left, top + ph)
    svg.line(left, top + ph, left + pw, top + ph)
    for k in ks:
        svg.line(sx(k), top + ph, sx(k), top + ph + 4)
        svg.text(sx(k), top + ph + 18, k, size=11)
    svg.polyline([(sx(k), sy(c)) for k, c in zip(ks, costs)], PALETTE[0])
    for k, c in zip(ks, costs):
        svg.circle(sx(k), sy(c), 4, PALETTE[0], "#ffffff")
    knee = spec.annotations.get("knee")
    if knee:
        kx = sx(knee["k"])
        svg.line(kx, top, kx, top + ph, PALETTE[3], 1.5, dash="6,4")
        svg.text(kx + 6, top + 14, f"knee k={knee['k']} (second difference {knee['score']:.4g})", anchor="start", size=11)
    svg.text(left + pw / 2, height - 14, spec.x_label)
    svg.text(20, top + ph / 2, spec.y_label, rotate=-90)
    return svg.bytes()


def scatter_chart(coords, labels=None, title: str = "", centroids: bool = True):
    """2-D embedding scatter coloured by cluster, with an X at each cluster's mean position."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) == 0:
        raise SurveySegError("scatter needs a non-empty n x 2 coordinate array")
    labels = np.zeros(len(coords), dtype=np.intp) if labels is None else np.asarray(labels, dtype=np.intp)
    if len(labels) != len(coords):
        raise LengthMismatch("labels and coordinates differ in length")
    series = [
        {"row_id": i, "x": float(x), "y": float(y), "cluster": int(l)}
        for i, ((x, y), l) in enumerate(zip(coords, labels))
    ]
    centres = {int(l): coords[labels == l].mean(axis=0).tolist() for l in np.unique(labels)} if centroids else {}
    spec = ChartSpec("scatter", series, "Dimension 1", "Dimension 2", title, annotations={"centroids": centres})
    return spec, _render_scatter(spec)


def _render_scatter(spec: ChartSpec) -> bytes:
    width, height = 640, 560
    left, top, right, bottom = 60, 50, 120, 50
    pw, ph = width - left - right, height - top - bottom
    xs = np.array([s["x"] for s in spec.series])
    ys = np.array([s["y"] for s in spec.series])
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    xpad = (xhi - xlo) * 0.05 or 1.0
    ypad = (yhi - ylo) * 0.05 or 1.0
    xlo, xhi, ylo, yhi = xlo - xpad, xhi + xpad, ylo - ypad, yhi + ypad

    def sx(x):
        return left + pw * (x - xlo) / (xhi - xlo)

    def sy(y):
        return top + ph - ph * (y - ylo) / (yhi - ylo)

    svg = _Svg(width, height, spec.title or "Embedding scatter")
    if spec.title:
        svg.text(width / 2, 28, spec.title, size=15, weight="bold")
    svg.rect(left, top, pw, ph, "none", "#000000")
    for s in spec.series:
        svg.circle(sx(s["x"]), sy(s["y"]), 2.5, PALETTE[s["cluster"] % len(PALETTE)])
    for l, (cx, cy) in sorted(spec.annotations.get("centroids", {}).items()):
        svg.cross(sx(cx), sy(cy), 7, "#000000", 3.5)
        svg.cross(sx(cx), sy(cy), 6, PALETTE[l % len(PALETTE)], 2.0)
    clusters = sorted({s["cluster"] for s in spec.series})
    for j, l in enumerate(clusters):
        ly = top + 10 + j * 20
        svg.circle(width - right + 20, ly - 4, 5, PALETTE[l % len(PALETTE)])
        svg.text(width - right + 32, ly, f"Cluster {l}", anchor="start", size=11)
    svg.text(left + pw / 2, height - 14, spec.x_label)
    svg.text(18, top + ph / 2, spec.y_label, rotate=-90)
    return svg.bytes()


def profiles_table(profiles: Sequence[ClusterProfile]) -> str:
    """Per-cluster proportion of every code, two decimals, like a distribution-by-cluster table."""
    if not profiles:
        raise SurveySegError("no profiles to tabulate")
    variables = list(profiles[0].distributions)
    header = ["Cluster", "Size"]
    for v in variables:
        header += [f"{v}={code}" for code in profiles[0].distributions[v]]
    header += [f"mean {v}" for v in profiles[0].means]
    lines = [",".join(header)]
    for p in profiles:
        cells = [str(p.cluster), str(p.size)]
        for v in variables:
            cells += [f"{x:.2f}" for x in p.distributions[v].values()]
        cells += [f"{x:.2f}" for x in p.means.values()]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
