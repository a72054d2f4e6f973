"""Static faceted line charts written directly as SVG 1.1 markup.

The renderer is a pure function of the result rows, which are always
read back from CSV text, so re-rendering a saved CSV reproduces the SVG
byte for byte.
"""
from __future__ import annotations

import csv
import io
from xml.sax.saxutils import escape

COLORS = {"ancova": "#1b9e77", "mmrm": "#d95f02", "mmrmx": "#7570b3"}
LABELS = {"ancova": "ANCOVA (complete cases)", "mmrm": "MMRM", "mmrmx": "MMRM with time x covariate"}
AXIS_NAMES = {"delta": "dropout rate δ", "rho": "residual correlation ρ", "b": "b"}

PANEL_W, PANEL_H = 200, 160
MARGIN_L, MARGIN_T, GAP_X, GAP_Y = 60, 70, 30, 55


def read_rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def _num(s):
    return float(s)


def _fmt(v):
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def _ordered(values):
    return sorted(set(values), key=float)


def render_faceted(rows: list[dict], *, x: str, facet_row: str, facet_col: str,
                   y: str = "rejection_rate", series: str = "estimator",
                   reference: float | None = None, title: str = "",
                   y_label: str = "rejection rate") -> str:
    """One panel per (facet_row, facet_col) value pair, one line per series."""
    row_vals = _ordered(r[facet_row] for r in rows)
    col_vals = _ordered(r[facet_col] for r in rows)
    x_vals = [float(v) for v in _ordered(r[x] for r in rows)]
    names = [s for s in COLORS if any(r[series] == s for r in rows)]
    names += sorted({r[series] for r in rows} - set(names))

    ys = [_num(r[y]) for r in rows if r[y] not in ("", "nan")]
    y_max = max(ys + [reference or 0.0, 0.1])
    y_max = 1.0 if y_max > 0.5 else min(1.0, round(y_max * 1.2 + 0.005, 2))
    x_lo, x_hi = min(x_vals), max(x_vals)
    x_span = (x_hi - x_lo) or 1.0

    width = MARGIN_L + len(col_vals) * (PANEL_W + GAP_X) + 10
    height = MARGIN_T + len(row_vals) * (PANEL_H + GAP_Y) + 10
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    lx = MARGIN_L
    for name in names:
        color = COLORS.get(name, "#555555")
        out.append(f'<line x1="{lx}" y1="36" x2="{lx + 20}" y2="36" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 25}" y="40">{escape(LABELS.get(name, name))}</text>')
        lx += 40 + 7 * len(LABELS.get(name, name))

    for ri, rv in enumerate(row_vals):
        for ci, cv in enumerate(col_vals):
            px = MARGIN_L + ci * (PANEL_W + GAP_X)
            py = MARGIN_T + ri * (PANEL_H + GAP_Y)

            def sx(v):
                return px + (v - x_lo) / x_span * PANEL_W

            def sy(v):
                return py + PANEL_H - v / y_max * PANEL_H

            out.append(f'<g class="panel" data-{facet_row}="{rv}" data-{facet_col}="{cv}">')
            out.append(f'<rect x="{px}" y="{py}" width="{PANEL_W}" height="{PANEL_H}" '
                       'fill="none" stroke="#444444"/>')
            out.append(f'<text x="{px + PANEL_W / 2:.1f}" y="{py - 6}" text-anchor="middle">'
                       f'{escape(AXIS_NAMES.get(facet_row, facet_row))} = {_fmt(float(rv))}, '
                       f'{escape(AXIS_NAMES.get(facet_col, facet_col))} = {_fmt(float(cv))}</text>')
            for k in range(5):
                v = y_max * k / 4
                out.append(f'<line x1="{px - 4}" y1="{sy(v):.1f}" x2="{px}" y2="{sy(v):.1f}" stroke="#444444"/>')
                if ci == 0:
                    out.append(f'<text x="{px - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
            for v in x_vals:
                out.append(f'<line x1="{sx(v):.1f}" y1="{py + PANEL_H}" x2="{sx(v):.1f}" '
                           f'y2="{py + PANEL_H + 4}" stroke="#444444"/>')
                out.append(f'<text x="{sx(v):.1f}" y="{py + PANEL_H + 15}" text-anchor="middle">{_fmt(v)}</text>')
            out.append(f'<text x="{px + PANEL_W / 2:.1f}" y="{py + PANEL_H + 30}" text-anchor="middle">'
                       f'{escape(AXIS_NAMES.get(x, x))}</text>')
            if reference is not None:
                out.append(f'<line class="reference" x1="{px}" y1="{sy(reference):.1f}" '
                           f'x2="{px + PANEL_W}" y2="{sy(reference):.1f}" stroke="#999999" '
                           'stroke-dasharray="4,3"/>')
            for name in names:
                pts = sorted((float(r[x]), _num(r[y])) for r in rows
                             if r[series] == name and r[facet_row] == rv and r[facet_col] == cv
                             and r[y] not in ("", "nan"))
                if not pts:
                    continue
                color = COLORS.get(name, "#555555")
                path = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in pts)
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
                for a, b in pts:
                    out.append(f'<circle cx="{sx(a):.1f}" cy="{sy(b):.1f}" r="2.5" fill="{color}"/>')
            out.append("</g>")
    out.append(f'<text transform="translate(14 {MARGIN_T + len(row_vals) * (PANEL_H + GAP_Y) / 2:.1f}) '
               f'rotate(-90)" text-anchor="middle">{escape(y_label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def power_svg(csv_text: str) -> str:
    return render_faceted(read_rows(csv_text), x="delta", facet_row="b", facet_col="rho",
                          title="Power by dropout rate")


def type1_svg(csv_text: str, nominal: float = 0.05) -> str:
    return render_faceted(read_rows(csv_text), x="rho", facet_row="delta", facet_col="b",
                          reference=nominal, title="Type I error under MAR dropout",
                          y_label="type I error")
