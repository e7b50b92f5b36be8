"""CSV tables with a hashed metadata header, native SVG line plots and summary JSON."""
from __future__ import annotations

import hashlib
import io
import csv
import json
import math
from pathlib import Path


def git_blob_sha1(data: bytes) -> str:
    """The object id git would give this content."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    if hasattr(v, "item"):
        return _fmt(v.item())
    return v


def write_csv(path, columns, rows, config_sha256: str, meta: dict | None = None) -> str:
    """Write rows under '#'-prefixed metadata lines; returns the body's blob hash.

    The header carries the config hash and the git blob hash of the body
    (column line plus rows), so any table can be checked against its config
    and content alone.
    """
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    body = buf.getvalue().encode()
    digest = git_blob_sha1(body)
    head = [f"# config_sha256: {config_sha256}", f"# content_sha1: {digest}"]
    for k, v in (meta or {}).items():
        head.append(f"# {k}: {v}")
    Path(path).write_bytes(("\n".join(head) + "\n").encode() + body)
    return digest


def read_csv(path):
    """(metadata dict, column names, rows as strings)."""
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = v
        else:
            lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]


def verify_csv(path) -> bool:
    data = Path(path).read_bytes()
    lines = data.split(b"\n")
    i = 0
    digest = None
    while i < len(lines) and lines[i].startswith(b"# "):
        if lines[i].startswith(b"# content_sha1: "):
            digest = lines[i].split(b": ", 1)[1].decode()
        i += 1
    body = b"\n".join(lines[i:])
    return digest == git_blob_sha1(body)


# ---------------------------------------------------------------- SVG

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_plot(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
                  logx: bool = False, logy: bool = False, width: int = 560, height: int = 400):
    """Minimal line plot: ``series`` maps a label to (xs, ys)."""
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    pts = {k: [(tx(x), ty(y)) for x, y in zip(*v) if (not logx or x > 0) and (not logy or y > 0)]
           for k, v in series.items()}
    allp = [p for v in pts.values() for p in v]
    if not allp:
        allp = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    ml, mr, mt, mb = 70, 20, 40, 50
    W, H = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * W

    def sy(v):
        return mt + H - (v - y0) / (y1 - y0) * H

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect x="{ml}" y="{mt}" width="{W}" height="{H}" fill="none" stroke="#333"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<text x="{ml + W / 2:.1f}" y="{height - 10}" text-anchor="middle">{_esc(xlabel)}</text>',
           f'<text x="15" y="{mt + H / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 15 {mt + H / 2:.1f})">{_esc(ylabel)}</text>']
    for j in range(5):
        fx = x0 + (x1 - x0) * j / 4
        fy = y0 + (y1 - y0) * j / 4
        lx = f"1e{fx:.2g}" if logx else f"{fx:.3g}"
        ly = f"1e{fy:.2g}" if logy else f"{fy:.3g}"
        out.append(f'<text x="{sx(fx):.1f}" y="{mt + H + 16}" text-anchor="middle">{lx}</text>')
        out.append(f'<text x="{ml - 6}" y="{sy(fy) + 4:.1f}" text-anchor="end">{ly}</text>')
    for n, (label, p) in enumerate(pts.items()):
        col = _COLORS[n % len(_COLORS)]
        if p:
            d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in p)
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{d}"/>')
            for a, b in p:
                out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="{col}"/>')
        out.append(f'<text x="{ml + 10}" y="{mt + 16 + 16 * n}" fill="{col}">{_esc(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_summary(path, summary: dict):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not serialisable: {type(o)}")
