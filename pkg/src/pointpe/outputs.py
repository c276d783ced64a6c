"""CSV/SVG writers and run-config hashing."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from typing import Iterable, Mapping, Optional, Sequence

from .pointcloud import atomic_write_text


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(doc: Mapping) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()[:16]


def _cell(v):
    if isinstance(v, float):
        return repr(round(v, 12)) if math.isfinite(v) else str(v)
    return v


def csv_text(columns: Sequence[str], rows: Iterable, comments: Sequence[str] = ()) -> str:
    """Comment lines (``# ...``) followed by a header and the rows.

    ``rows`` may hold mappings keyed by column or plain sequences.
    """
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        vals = [r[c] for c in columns] if isinstance(r, Mapping) else list(r)
        w.writerow([_cell(v) for v in vals])
    return buf.getvalue()


def write_csv(path, columns, rows, comments: Sequence[str] = ()) -> None:
    atomic_write_text(path, csv_text(columns, rows, comments))


def csv_body(text: str) -> str:
    """The non-comment part of a CSV produced by :func:`csv_text`."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def svg_line_plot(
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 480,
    height: int = 320,
) -> str:
    """A static SVG with one polyline per named ``(xs, ys)`` series."""
    pad_l, pad_r, pad_t, pad_b = 56, 110, 28, 40
    xs = [float(x) for s in series.values() for x in s[0]]
    ys = [float(y) for s in series.values() for y in s[1]]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
        f'<text x="{pad_l + pw / 2:.1f}" y="16" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 6}" text-anchor="middle">{_esc(xlabel)}</text>',
        f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    for v, anchor_y in ((y0, sy(y0)), (y1, sy(y1))):
        out.append(f'<text x="{pad_l - 4}" y="{anchor_y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for v in (x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{pad_t + ph + 14}" text-anchor="middle">{v:.3g}</text>')
    for k, (name, (sxs, sys_)) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(sxs, sys_))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = pad_t + 12 + 14 * k
        out.append(f'<line x1="{width - pad_r + 8}" y1="{ly - 4}" x2="{width - pad_r + 24}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad_r + 28}" y="{ly}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(path, text: str) -> None:
    atomic_write_text(path, text)


def header_comments(kind: str, cfg_hash: str, units: Optional[str] = None) -> list[str]:
    out = [f"pointpe {kind}", f"config_hash: {cfg_hash}"]
    if units:
        out.append(f"units: {units}")
    return out
