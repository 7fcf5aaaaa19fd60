"""Self-contained SVG line plot of seed-averaged error rate against alpha."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
           "#7f7f7f", "#bcbd22"]
DASHES = {"AE": "6,4", "LD": "", "CLDAE": "", "GLOBAL": "2,3"}


def _series(rows):
    acc: dict = {}
    for r in rows:
        key = (str(r["scheme"]), int(r["M"]))
        acc.setdefault(key, {}).setdefault(float(r["alpha"]), []).append(float(r["epsilon"]))
    return {k: sorted((a, float(np.mean(v))) for a, v in d.items()) for k, d in sorted(acc.items())}


def render_error_rate_svg(rows, width=720, height=480, floor=1e-5, title="Error rate vs. correlation"):
    """Return the SVG text: one curve per (scheme, M), log-scale epsilon axis.

    Zero error rates are drawn at ``floor`` so they stay on the log axis.
    """
    series = _series(rows)
    left, right, top, bottom = 70, 170, 40, 50
    pw, ph = width - left - right, height - top - bottom
    values = [max(e, floor) for pts in series.values() for _, e in pts] or [floor, 1.0]
    lo = 10 ** math.floor(math.log10(min(values)))
    hi = 10 ** math.ceil(math.log10(max(values)))
    if hi <= lo:
        hi = lo * 10
    alphas = [a for pts in series.values() for a, _ in pts] or [0.0, 1.0]
    a0, a1 = min(min(alphas), 0.0), max(max(alphas), 1.0)

    def x(a):
        return left + (a - a0) / (a1 - a0) * pw

    def y(e):
        e = max(e, floor)
        return top + (math.log10(hi) - math.log10(e)) / (math.log10(hi) - math.log10(lo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for d in range(int(round(math.log10(lo))), int(round(math.log10(hi))) + 1):
        yy = y(10.0 ** d)
        out.append(f'<line x1="{left}" y1="{yy:.1f}" x2="{left + pw}" y2="{yy:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{yy + 4:.1f}" text-anchor="end">1e{d}</text>')
    for t in np.linspace(a0, a1, 6):
        xx = x(t)
        out.append(f'<line x1="{xx:.1f}" y1="{top}" x2="{xx:.1f}" y2="{top + ph}" stroke="#eee"/>')
        out.append(f'<text x="{xx:.1f}" y="{top + ph + 18}" text-anchor="middle">{t:.1f}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">alpha</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">epsilon</text>')
    for i, ((scheme, M), pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        dash = DASHES.get(scheme, "")
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        path = " ".join(f"{x(a):.1f},{y(e):.1f}" for a, e in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.8"{dash_attr}/>')
        for a, e in pts:
            out.append(f'<circle cx="{x(a):.1f}" cy="{y(e):.1f}" r="2.5" fill="{color}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 40}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="1.8"{dash_attr}/>')
        out.append(f'<text x="{left + pw + 46}" y="{ly}">{escape(scheme)}, M={M}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_error_rate_svg(path, rows, **kwargs):
    with open(path, "w") as fh:
        fh.write(render_error_rate_svg(rows, **kwargs))
