"""Report files: CSV, JSON and standalone SVG, all written atomically."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .errors import InputError, IoFailure

SCHEMA_VERSION = 1


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (complex, np.complexfloating)):
        return {"re": _plain(v.real), "im": _plain(v.imag)}
    return v


def _cell(v):
    v = _plain(v)
    if v is None:
        return "nan"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def atomic_write(path, text):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(folder, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None
    return path


def csv_text(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0].keys())
    writer.writerow(header)
    for r in rows:
        writer.writerow([_cell(r.get(k)) for k in header])
    return buf.getvalue()


def json_text(results):
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_plain(results))
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _fmt(v):
    return f"{float(v):.12g}"


def line_svg(x, y, logx=False, logy=False, fit=None, title="", width=640, height=420):
    """Scatter-and-line SVG; ``fit=(slope, intercept)`` overlays ``y = e^i x^s`` on log axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y) & ((x > 0) | (not logx)) & ((y > 0) | (not logy))
    x, y = x[keep], y[keep]
    fx = np.log10 if logx else (lambda a: a)
    fy = np.log10 if logy else (lambda a: a)
    X, Y = fx(x), fy(y)
    pad = 50
    if X.size == 0:
        X = Y = np.zeros(1)
    x0, x1 = float(X.min()), float(X.max())
    y0, y1 = float(Y.min()), float(Y.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
    ]
    pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(X, Y))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue"/>')
    for a, b in zip(X, Y):
        parts.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="3" fill="steelblue"/>')
    if fit is not None and logx and logy and all(map(math.isfinite, fit)):
        s, c = fit
        ends = [(x0, (c + s * x0 * math.log(10)) / math.log(10)), (x1, (c + s * x1 * math.log(10)) / math.log(10))]
        (a0, b0), (a1, b1) = ends
        parts.append(
            f'<line x1="{_fmt(px(a0))}" y1="{_fmt(py(b0))}" x2="{_fmt(px(a1))}" y2="{_fmt(py(b1))}" '
            'stroke="firebrick" stroke-dasharray="6,4"/>'
        )
    axis = "log10 " if logx else ""
    parts.append(
        f'<text x="{pad}" y="{height - 12}" font-family="sans-serif" font-size="11">'
        f"{axis}x in [{_fmt(x0)}, {_fmt(x1)}]; {'log10 ' if logy else ''}y in [{_fmt(y0)}, {_fmt(y1)}]</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def loglog_svg(x, y, fit=None, title=""):
    return line_svg(x, y, logx=True, logy=True, fit=fit, title=title)


def emit_report(results, fmt, path):
    """Write ``results`` as ``csv`` (needs ``rows``), ``json`` or ``svg`` (needs ``plot``).

    ``results`` is a dict; ``rows`` is a list of flat dicts sharing keys,
    ``plot`` holds keyword arguments for :func:`line_svg`.
    """
    if not results:
        raise InputError("results are empty")
    if fmt == "csv":
        rows = results.get("rows") if isinstance(results, dict) else results
        if not rows:
            raise InputError("no rows to write")
        text = csv_text(rows)
    elif fmt == "json":
        text = json_text(results if isinstance(results, dict) else {"rows": results})
    elif fmt == "svg":
        plot = results.get("plot")
        if not plot:
            raise InputError("no plot data for svg output")
        text = line_svg(**plot)
    else:
        raise InputError(f"unknown format {fmt!r}")
    return atomic_write(path, text)
