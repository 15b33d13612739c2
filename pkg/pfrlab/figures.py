"""
Static SVG figures written without a plotting library: N_sigma per repetition, 4x4 PTM
heatmaps and a grouped bar chart of per-gate metrics.
"""

from html import escape
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
PAULI_LABELS = ("I", "X", "Y", "Z")
FONT = 'font-family="sans-serif" font-size="12"'


def _svg(width, height, body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n"
    )


def _text(x, y, s, anchor="middle", extra=""):
    return f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" {FONT}{extra}>{escape(str(s))}</text>'


def _write(path, content):
    path = Path(path)
    path.write_text(content)
    return path


def _nice_range(values):
    values = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = min(0.0, values.min()), max(0.0, values.max())
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_chart(series, path, title="", xlabel="", ylabel="", width=640, height=400):
    """``series`` maps a legend label to a list of y values at x = 1, 2, ..."""
    margin = 60
    plot_w, plot_h = width - 2 * margin - 120, height - 2 * margin
    n = max((len(v) for v in series.values()), default=1)
    lo, hi = _nice_range([y for ys in series.values() for y in ys])

    def sx(i):
        return margin + (plot_w * (i / (n - 1)) if n > 1 else plot_w / 2)

    def sy(y):
        return margin + plot_h * (1.0 - (y - lo) / (hi - lo))

    body = [
        _text(width / 2, margin / 2, title, extra=' font-weight="bold"'),
        f'<line x1="{margin}" y1="{margin + plot_h}" x2="{margin + plot_w}" y2="{margin + plot_h}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{margin + plot_h}" stroke="black"/>',
        _text(margin + plot_w / 2, height - 15, xlabel),
        _text(15, margin + plot_h / 2, ylabel, extra=f' transform="rotate(-90 15 {margin + plot_h / 2:.1f})"'),
    ]
    for tick in np.linspace(lo, hi, 5):
        body.append(_text(margin - 6, sy(tick) + 4, f"{tick:.3g}", anchor="end"))
    for i in range(n):
        body.append(_text(sx(i), margin + plot_h + 16, i + 1))
    if lo < 0.0 < hi:
        body.append(f'<line x1="{margin}" y1="{sy(0.0):.1f}" x2="{margin + plot_w}" y2="{sy(0.0):.1f}" stroke="#999" stroke-dasharray="4 3"/>')

    for s, (label, ys) in enumerate(series.items()):
        color = PALETTE[s % len(PALETTE)]
        points = " ".join(f"{sx(i):.1f},{sy(y):.1f}" for i, y in enumerate(ys) if np.isfinite(y))
        body.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        for i, y in enumerate(ys):
            if np.isfinite(y):
                body.append(f'<circle cx="{sx(i):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        ly = margin + 18 * s
        body.append(f'<rect x="{width - margin - 100}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        body.append(_text(width - margin - 85, ly, label, anchor="start"))
    return _write(path, _svg(width, height, body))


def _cell_color(value, scale):
    """Diverging blue-white-red color; |value| = scale is full intensity"""
    t = float(np.clip(value / scale, -1.0, 1.0)) if scale > 0 else 0.0
    fade = round(255 * (1.0 - abs(t)))
    if t >= 0:
        return f"rgb(255,{fade},{fade})"
    return f"rgb({fade},{fade},255)"


def heatmap(matrix, path, title="", labels=PAULI_LABELS, scale=1.0, cell=60):
    """Annotated heatmap of a PTM; entries of magnitude ``scale`` render at full intensity"""
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    margin = 40
    width, height = 2 * margin + cols * cell, 2 * margin + rows * cell
    body = [_text(width / 2, margin / 2, title, extra=' font-weight="bold"')]
    for i in range(rows):
        body.append(_text(margin - 10, margin + (i + 0.5) * cell + 4, labels[i] if i < len(labels) else i))
        for j in range(cols):
            x, y = margin + j * cell, margin + i * cell
            body.append(
                f'<rect class="cell" data-row="{i}" data-col="{j}" x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_cell_color(m[i, j], scale)}" stroke="#ccc"/>'
            )
            body.append(_text(x + cell / 2, y + cell / 2 + 4, f"{m[i, j]:.3f}"))
    for j in range(cols):
        body.append(_text(margin + (j + 0.5) * cell, margin + rows * cell + 16, labels[j] if j < len(labels) else j))
    return _write(path, _svg(width, height, body))


def bar_chart(groups, path, title="", ylabel="", width=640, height=400):
    """``groups`` maps a group label (gate) to {series label: value}"""
    margin = 60
    plot_w, plot_h = width - 2 * margin - 120, height - 2 * margin
    names = list(dict.fromkeys(k for values in groups.values() for k in values))
    lo, hi = _nice_range([v for values in groups.values() for v in values.values()])

    def sy(y):
        return margin + plot_h * (1.0 - (y - lo) / (hi - lo))

    group_w = plot_w / max(len(groups), 1)
    bar_w = 0.8 * group_w / max(len(names), 1)
    body = [
        _text(width / 2, margin / 2, title, extra=' font-weight="bold"'),
        f'<line x1="{margin}" y1="{sy(0.0):.1f}" x2="{margin + plot_w}" y2="{sy(0.0):.1f}" stroke="black"/>',
        _text(15, margin + plot_h / 2, ylabel, extra=f' transform="rotate(-90 15 {margin + plot_h / 2:.1f})"'),
    ]
    for tick in np.linspace(lo, hi, 5):
        body.append(_text(margin - 6, sy(tick) + 4, f"{tick:.3g}", anchor="end"))
    for g, (group, values) in enumerate(groups.items()):
        x0 = margin + g * group_w + 0.1 * group_w
        body.append(_text(x0 + 0.4 * group_w, margin + plot_h + 16, group))
        for s, name in enumerate(names):
            value = values.get(name, float("nan"))
            if not np.isfinite(value):
                continue
            top, bottom = sorted((sy(value), sy(0.0)))
            body.append(
                f'<rect x="{x0 + s * bar_w:.1f}" y="{top:.1f}" width="{bar_w:.1f}" height="{bottom - top:.1f}" '
                f'fill="{PALETTE[s % len(PALETTE)]}"/>'
            )
    for s, name in enumerate(names):
        ly = margin + 18 * s
        body.append(f'<rect x="{width - margin - 100}" y="{ly - 9}" width="10" height="10" fill="{PALETTE[s % len(PALETTE)]}"/>')
        body.append(_text(width - margin - 85, ly, name, anchor="start"))
    return _write(path, _svg(width, height, body))
