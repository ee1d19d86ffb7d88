"""CSV and SVG report emitters.

SVGs are plain generated markup, deterministic byte-for-byte for identical
inputs: fixed canvas, fixed float formatting, no library renderer. Each
data polyline carries class="series" plus the raw values in a
``data-series`` attribute so files can be checked without rasterizing.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from .matio import fmt
from .selection import Schedule, schedule_alpha
from .trajectory import Category, CategoryLabel, CategoryReport, TrajectoryFit

CATEGORY_ORDER = (Category.HL, Category.LH, Category.LL, Category.HH)
CATEGORY_COLORS = {
    Category.HL: "#d62728",
    Category.LH: "#1f77b4",
    Category.LL: "#7f7f7f",
    Category.HH: "#2ca02c",
}

_WIDTH, _HEIGHT = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 40, 50


def write_report_csv(report: CategoryReport, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", "count", "fraction"])
    for cat in CATEGORY_ORDER:
        writer.writerow([cat.value, report.counts[cat], fmt(report.fractions[cat])])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_report_csv(path: str | Path) -> dict[str, tuple[int, float]]:
    rows: dict[str, tuple[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows[row["category"]] = (int(row["count"]), float(row["fraction"]))
    return rows


def write_fits_csv(
    fits: Sequence[TrajectoryFit], labels: Sequence[CategoryLabel], path: str | Path
) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "j", "a", "b", "s0", "sK", "label", "fall_through"])
    for fit, label in zip(fits, labels):
        writer.writerow(
            [
                fit.i,
                fit.j,
                fmt(fit.slope),
                fmt(fit.intercept),
                fmt(fit.fitted_start),
                fmt(fit.fitted_end),
                label.category.value,
                "true" if label.fall_through else "false",
            ]
        )
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_fits_csv(path: str | Path) -> list[tuple[TrajectoryFit, CategoryLabel]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            fit = TrajectoryFit(
                int(row["i"]),
                int(row["j"]),
                float(row["a"]),
                float(row["b"]),
                float(row["s0"]),
                float(row["sK"]),
            )
            label = CategoryLabel(Category(row["label"]), row["fall_through"] == "true")
            out.append((fit, label))
    return out


def write_positives_csv(fits: Sequence[TrajectoryFit], path: str | Path) -> None:
    """Diagonal-pair fits, reported separately for diagnostics."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "a", "b", "s0", "sK"])
    for fit in fits:
        writer.writerow([fit.i, fmt(fit.slope), fmt(fit.intercept), fmt(fit.fitted_start), fmt(fit.fitted_end)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# SVG


def _coord(x: float) -> str:
    return format(x, ".2f")


def _scaled(values: Sequence[float], lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo
    if span == 0.0:
        span = 1.0
        lo -= 0.5
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float], str]],
    title: str,
    x_label: str,
    y_label: str,
) -> str:
    """Render labelled (xs, ys) polylines into standalone SVG markup."""
    xs_all = [x for _, xs, _, _ in series for x in xs]
    ys_all = [y for _, _, ys, _ in series for y in ys]
    if not xs_all:
        raise ValueError("line chart needs at least one point")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{title}</text>',
        f'<line x1="{_ML}" y1="{_HEIGHT - _MB}" x2="{_WIDTH - _MR}" y2="{_HEIGHT - _MB}" '
        'stroke="black" stroke-width="1"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_HEIGHT - _MB}" '
        'stroke="black" stroke-width="1"/>',
        f'<text x="{(_ML + _WIDTH - _MR) // 2}" y="{_HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="16" y="{(_MT + _HEIGHT - _MB) // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(_MT + _HEIGHT - _MB) // 2})">{y_label}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        xpix = _ML + frac * (_WIDTH - _MR - _ML)
        ypix = (_HEIGHT - _MB) - frac * (_HEIGHT - _MB - _MT)
        parts.append(
            f'<text x="{_coord(xpix)}" y="{_HEIGHT - _MB + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{format(xv, ".4g")}</text>'
        )
        parts.append(
            f'<text x="{_ML - 6}" y="{_coord(ypix + 3)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{format(yv, ".4g")}</text>'
        )
    for idx, (label, xs, ys, color) in enumerate(series):
        px = _scaled(xs, x_lo, x_hi, _ML, _WIDTH - _MR)
        py = _scaled(ys, y_lo, y_hi, _HEIGHT - _MB, _MT)
        points = " ".join(f"{_coord(x)},{_coord(y)}" for x, y in zip(px, py))
        raw = " ".join(f"{fmt(x)},{fmt(y)}" for x, y in zip(xs, ys))
        parts.append(
            f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{points}" data-label="{label}" data-series="{raw}"/>'
        )
        ly = _MT + 14 * idx
        parts.append(
            f'<rect x="{_WIDTH - _MR - 130}" y="{ly}" width="10" height="10" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{_WIDTH - _MR - 115}" y="{ly + 9}" font-family="sans-serif" '
            f'font-size="11">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_trajectories(
    fits: Sequence[TrajectoryFit],
    labels: Sequence[CategoryLabel],
    checkpoints: Sequence[int],
) -> str:
    """Mean fitted similarity line per regime, evaluated at the checkpoints."""
    series = []
    for cat in CATEGORY_ORDER:
        members = [f for f, lab in zip(fits, labels) if lab.category is cat]
        if not members:
            continue
        a = sum(f.slope for f in members) / len(members)
        b = sum(f.intercept for f in members) / len(members)
        xs = [float(k) for k in checkpoints]
        ys = [a * k + b for k in xs]
        series.append((cat.value, xs, ys, CATEGORY_COLORS[cat]))
    return line_chart(series, "Mean fitted similarity per regime", "checkpoint", "similarity")


def render_schedule(schedule: Schedule) -> str:
    """Alpha against epoch, evaluated at 0..E inclusive."""
    xs = list(range(schedule.total_epochs + 1))
    ys = [schedule_alpha(schedule, e) for e in xs]
    return line_chart(
        [(schedule.kind, [float(x) for x in xs], ys, "#1f77b4")],
        f"Difficulty quantile schedule ({schedule.kind})",
        "epoch",
        "alpha",
    )


def render_loss(curves: Sequence[tuple[str, Sequence[int], Sequence[float]]]) -> str:
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    series = [
        (label, [float(e) for e in epochs], list(losses), palette[i % len(palette)])
        for i, (label, epochs, losses) in enumerate(curves)
    ]
    return line_chart(series, "Training loss", "epoch", "loss")
