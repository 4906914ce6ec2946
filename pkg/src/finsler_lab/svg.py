"""Static SVG figures and CSV grids, written by hand (no plotting dependency)."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

_SIZE = 480
_PAD = 24


def _fmt(x: float) -> str:
    return f"{x:.3f}"


class _Canvas:
    def __init__(self, lo, hi, title: str = ""):
        self.lo = np.asarray(lo, dtype=float)
        span = np.asarray(hi, dtype=float) - self.lo
        self.scale = (_SIZE - 2 * _PAD) / max(float(np.max(span)), 1e-12)
        self.parts = []
        if title:
            self.parts.append(f'<text x="{_PAD}" y="{_PAD - 6}" font-size="12" font-family="sans-serif">{title}</text>')

    def xy(self, p):
        p = np.asarray(p, dtype=float)
        sx = _PAD + (p[..., 0] - self.lo[0]) * self.scale
        sy = _SIZE - _PAD - (p[..., 1] - self.lo[1]) * self.scale
        return sx, sy

    def polyline(self, pts, color="#1f4e9a", width=1.0):
        sx, sy = self.xy(pts)
        d = " ".join(f"{'M' if i == 0 else 'L'}{_fmt(a)},{_fmt(b)}" for i, (a, b) in enumerate(zip(sx, sy)))
        self.parts.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def rect(self, p, w, h, fill):
        sx, sy = self.xy(p)
        self.parts.append(
            f'<rect x="{_fmt(sx)}" y="{_fmt(sy - h * self.scale)}" width="{_fmt(w * self.scale)}" '
            f'height="{_fmt(h * self.scale)}" fill="{fill}" stroke="none"/>'
        )

    def arrow(self, p, d, color="#a33"):
        (x0, y0), (x1, y1) = [self.xy(q) for q in (p, np.asarray(p) + d)]
        self.parts.append(
            f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" stroke="{color}" stroke-width="1"/>'
            f'<circle cx="{_fmt(x1)}" cy="{_fmt(y1)}" r="1.2" fill="{color}"/>'
        )

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
            f'viewBox="0 0 {_SIZE} {_SIZE}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
        )


def traces_svg(traces, path) -> None:
    """Geodesic traces. Sphere traces are drawn in the ambient x-y projection."""
    curves = [np.asarray(t.points())[:, :2] for t in traces]
    allp = np.concatenate(curves) if curves else np.zeros((1, 2))
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    c = _Canvas(lo - 0.05, hi + 0.05, "geodesic traces")
    for k, pts in enumerate(curves):
        c.polyline(pts, color=["#1f4e9a", "#a33", "#2a7", "#96c"][k % 4])
    Path(path).write_text(c.render())


def quiver_svg(field, path, stride: int = 2) -> None:
    X = field.nodes()[::stride, ::stride]
    B = field.b[::stride, ::stride]
    lo = np.array([field.x1[0], field.x2[0]])
    hi = np.array([field.x1[-1], field.x2[-1]])
    c = _Canvas(lo, hi, f"beta ({field.chart.value} chart)")
    bmax = float(np.max(np.linalg.norm(B, axis=-1)))
    h = (field.x1[1] - field.x1[0]) * stride
    s = 0.9 * h / bmax if bmax > 0 else 0.0
    for p, b in zip(X.reshape(-1, 2), B.reshape(-1, 2)):
        c.arrow(p, s * b)
    Path(path).write_text(c.render())


def heatmap_svg(x1, x2, f, path, title: str = "potential f") -> None:
    lo = np.array([x1[0], x2[0]])
    hi = np.array([x1[-1], x2[-1]])
    c = _Canvas(lo, hi, title)
    fmin, fmax = float(np.min(f)), float(np.max(f))
    rng = fmax - fmin if fmax > fmin else 1.0
    h1, h2 = x1[1] - x1[0], x2[1] - x2[0]
    for i in range(len(x1)):
        for j in range(len(x2)):
            t = (f[i, j] - fmin) / rng
            r, g, b = int(255 * t), int(80 + 100 * (1 - abs(2 * t - 1))), int(255 * (1 - t))
            c.rect((x1[i] - h1 / 2, x2[j] - h2 / 2), h1, h2, f"#{r:02x}{g:02x}{b:02x}")
    Path(path).write_text(c.render())


def write_grid_csv(path, field, f=None) -> None:
    """Columns ``x1,x2,b1,b2,f``; ``f`` is left empty when no potential exists."""
    X = field.nodes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "b1", "b2", "f"])
        for i in range(X.shape[0]):
            for j in range(X.shape[1]):
                fv = "" if f is None else f"{f[i, j]:.17g}"
                w.writerow([f"{X[i, j, 0]:.17g}", f"{X[i, j, 1]:.17g}", f"{field.b[i, j, 0]:.17g}", f"{field.b[i, j, 1]:.17g}", fv])
