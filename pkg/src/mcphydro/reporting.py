"""Report emission: percentile tables (CSV/JSON), dependency-free SVG box
plots, and hydrograph extracts for chosen water years."""

from __future__ import annotations

import csv
import json

import numpy as np

from .data_model import DEFAULT_WY_START_MONTH, water_year_index
from .errors import ValidationError
from .metrics import PERCENTILE_LABELS

TABLE_COLUMNS = ("model",) + PERCENTILE_LABELS + ("n_params",)


def _table_rows(entries):
    if not entries:
        raise ValidationError("empty run set")
    rows = []
    for name, percentiles, n_params in entries:
        row = {"model": name, "n_params": n_params}
        for label in PERCENTILE_LABELS:
            row[label] = percentiles[label]
        rows.append(row)
    return rows


def write_table_csv(entries, path):
    """entries: (name, percentile dict, n_params) per model."""
    rows = _table_rows(entries)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def write_table_json(entries, path):
    rows = _table_rows(entries)
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)


def write_hydrograph_csv(fs, sim, years, path,
                         wy_start_month=DEFAULT_WY_START_MONTH):
    """Daily forcing, observed and simulated flow for chosen water years."""
    wy = water_year_index(fs.dates, wy_start_month)
    sel = np.isin(wy, list(years))
    if not sel.any():
        raise ValidationError(f"no timesteps in water years {list(years)}")
    sim = np.asarray(sim, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "precip_mm", "pet_mm", "obs_mm", "sim_mm"])
        for i in np.flatnonzero(sel):
            obs = "" if fs.obs_out is None else repr(float(fs.obs_out[i]))
            w.writerow([str(fs.dates[i]), repr(float(fs.precip[i])),
                        repr(float(fs.pot_loss[i])), obs,
                        repr(float(sim[i]))])


# ---------------------------------------------------------------------------
# SVG

_W, _H = 640, 400
_MARGIN = 60
_BOX_FRAC = 0.5


def _scale(v, lo, hi):
    span = hi - lo if hi > lo else 1.0
    return _H - _MARGIN - (v - lo) / span * (_H - 2 * _MARGIN)


def boxplot_svg(entries, path, title="annual skill score"):
    """One box glyph per model: box 25-75%, median bar, whiskers to
    5%/95%, a cross at the worst year."""
    rows = _table_rows(entries)
    vals = [row[l] for row in rows for l in PERCENTILE_LABELS]
    lo, hi = min(vals), max(vals)
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad, hi + pad
    n = len(rows)
    slot = (_W - 2 * _MARGIN) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_H - _MARGIN}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = lo + frac * (hi - lo)
        y = _scale(v, lo, hi)
        parts.append(f'<line x1="{_MARGIN - 4}" y1="{y:.1f}" '
                     f'x2="{_MARGIN}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{_MARGIN - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end" font-size="10">{v:.2f}</text>')
    for k, row in enumerate(rows):
        cx = _MARGIN + (k + 0.5) * slot
        half = _BOX_FRAC * slot / 2
        y5 = _scale(row["5%"], lo, hi)
        y25 = _scale(row["25%"], lo, hi)
        y50 = _scale(row["median"], lo, hi)
        y75 = _scale(row["75%"], lo, hi)
        y95 = _scale(row["95%"], lo, hi)
        yw = _scale(row["worst"], lo, hi)
        parts.append(f'<line x1="{cx:.1f}" y1="{y95:.1f}" x2="{cx:.1f}" '
                     f'y2="{y5:.1f}" stroke="black"/>')
        for y in (y5, y95):
            parts.append(f'<line x1="{cx - half / 2:.1f}" y1="{y:.1f}" '
                         f'x2="{cx + half / 2:.1f}" y2="{y:.1f}" '
                         f'stroke="black"/>')
        parts.append(f'<rect x="{cx - half:.1f}" y="{y75:.1f}" '
                     f'width="{2 * half:.1f}" height="{y25 - y75:.1f}" '
                     f'fill="white" stroke="black"/>')
        parts.append(f'<line x1="{cx - half:.1f}" y1="{y50:.1f}" '
                     f'x2="{cx + half:.1f}" y2="{y50:.1f}" '
                     f'stroke="black" stroke-width="2"/>')
        parts.append(f'<path d="M {cx - 4:.1f} {yw - 4:.1f} L {cx + 4:.1f} '
                     f'{yw + 4:.1f} M {cx - 4:.1f} {yw + 4:.1f} '
                     f'L {cx + 4:.1f} {yw - 4:.1f}" stroke="red"/>')
        parts.append(f'<text x="{cx:.1f}" y="{_H - _MARGIN + 16}" '
                     f'text-anchor="middle" font-size="10">'
                     f'{row["model"]}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def hydrograph_svg(fs, sim, path, title="hydrograph"):
    """Observed vs simulated daily flow as two polylines."""
    sim = np.asarray(sim, dtype=float)
    n = len(fs)
    series = [("sim", sim, "steelblue")]
    if fs.obs_out is not None:
        series.insert(0, ("obs", fs.obs_out, "black"))
    hi = max(float(s.max()) for _, s, _ in series) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
    ]
    for label, s, color in series:
        pts = []
        for i in range(n):
            x = _MARGIN + i / max(n - 1, 1) * (_W - 2 * _MARGIN)
            y = _scale(float(s[i]), 0.0, hi)
            pts.append(f"{x:.1f},{y:.1f}")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                     f'stroke="{color}"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
