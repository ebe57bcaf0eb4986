"""CSV tables and small dependency-free SVG bar charts.

CSV is the canonical output; the chart is a convenience.  Both are pure
functions of their input so identical data gives byte-identical files.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import InputError

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")


def _rows(data: dict[str, dict[str, float]]) -> tuple[list[str], list[str]]:
    if not data or not any(data.values()):
        raise InputError("nothing to plot")
    series = list(data)
    xs: list[str] = []
    for values in data.values():
        for x in values:
            if x not in xs:
                xs.append(x)
    return series, xs


def to_csv(data: dict[str, dict[str, float]], index_name: str = "x") -> str:
    series, xs = _rows(data)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([index_name] + series)
    for x in xs:
        w.writerow([x] + [repr(float(data[s][x])) if x in data[s] else "" for s in series])
    return buf.getvalue()


def read_csv(text: str) -> dict[str, dict[str, float]]:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out: dict[str, dict[str, float]] = {s: {} for s in header[1:]}
    for row in body:
        for s, cell in zip(header[1:], row[1:]):
            if cell != "":
                out[s][row[0]] = float(cell)
    return out


def to_svg(data: dict[str, dict[str, float]], title: str = "", width: int = 480, height: int = 280) -> str:
    series, xs = _rows(data)
    top = max([v for vals in data.values() for v in vals.values()] + [1e-12])
    left, right, bottom, head = 48, 12, 36, 28
    plot_w, plot_h = width - left - right, height - head - bottom
    group = plot_w / len(xs)
    bar = group * 0.8 / len(series)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle">{escape(title)}</text>',
        f'<line x1="{left}" y1="{head + plot_h}" x2="{left + plot_w}" y2="{head + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{head}" x2="{left}" y2="{head + plot_h}" stroke="black"/>',
        f'<text x="{left - 4}" y="{head + 4}" text-anchor="end">{top:.3g}</text>',
        f'<text x="{left - 4}" y="{head + plot_h}" text-anchor="end">0</text>',
    ]
    for gi, x in enumerate(xs):
        x0 = left + gi * group + group * 0.1
        for si, s in enumerate(series):
            v = data[s].get(x)
            if v is None:
                continue
            h = max(v, 0.0) / top * plot_h
            parts.append(f'<rect x="{x0 + si * bar:.2f}" y="{head + plot_h - h:.2f}" width="{bar:.2f}" '
                         f'height="{h:.2f}" fill="{PALETTE[si % len(PALETTE)]}"/>')
        parts.append(f'<text x="{left + (gi + 0.5) * group:.1f}" y="{head + plot_h + 14}" '
                     f'text-anchor="middle">{escape(str(x))}</text>')
    for si, s in enumerate(series):
        y = height - 6
        x = left + si * 110
        parts.append(f'<rect x="{x}" y="{y - 9}" width="9" height="9" fill="{PALETTE[si % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 13}" y="{y}">{escape(s)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plot(data: dict[str, dict[str, float]], path, title: str = "", index_name: str = "x") -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; ``data`` maps series -> {x: value}."""
    base = Path(path)
    if base.suffix in (".csv", ".svg"):
        base = base.with_suffix("")
    csv_path, svg_path = base.with_suffix(".csv"), base.with_suffix(".svg")
    csv_text = to_csv(data, index_name)
    svg_text = to_svg(data, title)
    try:
        csv_path.write_text(csv_text, encoding="utf-8")
        svg_path.write_text(svg_text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write plot to {base}: {exc}") from exc
    return csv_path, svg_path


def write_matrix_csv(matrix, path, labels=None) -> Path:
    """Attention heatmap as a CSV matrix for external plotting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(matrix)
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    w.writerow(["query\\key"] + labels)
    for lab, row in zip(labels, matrix):
        w.writerow([lab] + [repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return Path(path)
