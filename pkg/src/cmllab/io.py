"""Result files: hashing, deterministic CSV/JSON writers and SVG figures.

All writers produce byte-identical files for identical inputs. JSON keys
are sorted, floats are written with ``repr`` (shortest round-trip form) and
line endings are ``\\n`` on every platform.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence

import numpy as np


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _plain(obj):
    """Convert numpy scalars/arrays, tuples and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj, indent: Optional[int] = 2) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=indent) + "\n"


def _write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_json(path, obj) -> Path:
    return _write_text(path, dumps(obj))


def write_jsonl(path, records: Iterable[Mapping]) -> Path:
    lines = [json.dumps(_plain(r), sort_keys=True) for r in records]
    return _write_text(path, "".join(line + "\n" for line in lines))


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def write_csv(path, rows: Sequence[Mapping], fields: Optional[List[str]] = None) -> Path:
    """CSV with a header row. Columns follow ``fields`` or the first row's key order."""
    if fields is None:
        fields = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in fields])
    return _write_text(path, buf.getvalue())


def write_records(path_stem, rows: Sequence[Mapping], fmt: str,
                  fields: Optional[List[str]] = None) -> Path:
    """``stem.csv`` or ``stem.jsonl`` depending on ``fmt``."""
    stem = Path(path_stem)
    if fmt == "csv":
        return write_csv(stem.with_suffix(".csv"), rows, fields)
    return write_jsonl(stem.with_suffix(".jsonl"), rows)


# ---------------------------------------------------------------------------
# SVG


def _svg_doc(width: int, height: int, body: List[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body,
                      "</svg>"]) + "\n"


def _f(v: float) -> str:
    return f"{v:.3f}"


def bifurcation_svg(path, points: Sequence[tuple], floor: float = 1e-18,
                    width: int = 640, height: int = 400, title: str = "") -> Path:
    """Scatter of (c, dist) samples with a log10 vertical axis.

    Distances below ``floor`` (including exact zeros) are drawn at the floor.
    """
    pad_l, pad_r, pad_t, pad_b = 60, 20, 30, 40
    pts = [(float(c), max(float(d), floor)) for c, d in points if not math.isnan(float(d))]
    cs = [p[0] for p in pts] or [0.0, 1.0]
    c_lo, c_hi = min(cs), max(cs)
    if c_hi == c_lo:
        c_lo, c_hi = c_lo - 0.5, c_hi + 0.5
    y_lo, y_hi = math.log10(floor), 0.0
    W, H = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(c):
        return pad_l + (c - c_lo) / (c_hi - c_lo) * W

    def sy(d):
        return pad_t + (y_hi - math.log10(d)) / (y_hi - y_lo) * H

    body = [f'<rect x="{pad_l}" y="{pad_t}" width="{W}" height="{H}" fill="none" stroke="black"/>']
    for e in range(int(y_lo), 1, 3):
        y = sy(10.0 ** e)
        body.append(f'<line x1="{pad_l - 4}" y1="{_f(y)}" x2="{pad_l}" y2="{_f(y)}" stroke="black"/>')
        body.append(f'<text x="{pad_l - 6}" y="{_f(y + 4)}" font-size="10" text-anchor="end">1e{e}</text>')
    for k in range(5):
        c = c_lo + k * (c_hi - c_lo) / 4
        x = sx(c)
        body.append(f'<line x1="{_f(x)}" y1="{pad_t + H}" x2="{_f(x)}" y2="{pad_t + H + 4}" stroke="black"/>')
        body.append(f'<text x="{_f(x)}" y="{pad_t + H + 16}" font-size="10" text-anchor="middle">{c:.3g}</text>')
    body.append(f'<text x="{pad_l + W / 2}" y="{height - 6}" font-size="12" text-anchor="middle">c</text>')
    body.append(f'<text x="14" y="{pad_t + H / 2}" font-size="12" text-anchor="middle" '
                f'transform="rotate(-90 14 {pad_t + H / 2})">dist to diagonal</text>')
    if title:
        body.append(f'<text x="{pad_l + W / 2}" y="18" font-size="13" text-anchor="middle">{title}</text>')
    for c, d in pts:
        body.append(f'<circle cx="{_f(sx(c))}" cy="{_f(sy(d))}" r="1.2" fill="#1f4e9a" fill-opacity="0.5"/>')
    return _write_text(path, _svg_doc(width, height, body))


def forest_svg(path, forest, depth: int, kink: float = 0.5, size: int = 480) -> Path:
    """Components of ``forest`` at ``depth`` in the unit square, with the fold
    lines x_i = kink and the diagonal."""
    pad = 20
    S = size - 2 * pad

    def sx(x):
        return pad + x * S

    def sy(y):
        return pad + (1.0 - y) * S

    body = [f'<rect x="{pad}" y="{pad}" width="{S}" height="{S}" fill="none" stroke="black"/>',
            f'<line x1="{_f(sx(kink))}" y1="{_f(sy(0))}" x2="{_f(sx(kink))}" y2="{_f(sy(1))}" '
            'stroke="gray" stroke-dasharray="4 3"/>',
            f'<line x1="{_f(sx(0))}" y1="{_f(sy(kink))}" x2="{_f(sx(1))}" y2="{_f(sy(kink))}" '
            'stroke="gray" stroke-dasharray="4 3"/>',
            f'<line x1="{_f(sx(0))}" y1="{_f(sy(0))}" x2="{_f(sx(1))}" y2="{_f(sy(1))}" stroke="#b03030"/>']
    palette = ["#1f4e9a", "#2a8a3e", "#c07a00", "#7a3fa0"]
    for i, comp in enumerate(forest.components(depth)):
        V = comp.curve.vertices
        pts = " ".join(f"{_f(sx(x))},{_f(sy(y))}" for x, y in V)
        body.append(f'<polyline points="{pts}" fill="none" stroke="{palette[i % len(palette)]}" '
                    'stroke-width="1.5"/>')
    body.append(f'<text x="{pad}" y="14" font-size="12">depth {depth}: '
                f'{forest.count(depth)} components</text>')
    return _write_text(path, _svg_doc(size, size, body))
