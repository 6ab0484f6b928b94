"""Dependency-free SVG figures: learning curves, calibration scatter, binned safety."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .metrics import bin_by_return

W, H, PAD = 480, 320, 48


class _Axes:
    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            yhi = ylo + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v):
        return PAD + (v - self.xlo) / (self.xhi - self.xlo) * (W - 2 * PAD)

    def y(self, v):
        return H - PAD - (v - self.ylo) / (self.yhi - self.ylo) * (H - 2 * PAD)

    def pts(self, xs, ys):
        return " ".join(f"{self.x(a):.2f},{self.y(b):.2f}" for a, b in zip(xs, ys))


def _frame(ax, title, xlabel, ylabel):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<line class="axis" x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line class="axis" x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>',
        f'<text x="{PAD}" y="{H - PAD + 16}" font-size="10">{ax.xlo:.3g}</text>',
        f'<text x="{W - PAD}" y="{H - PAD + 16}" text-anchor="end" font-size="10">{ax.xhi:.3g}</text>',
        f'<text x="{PAD - 4}" y="{H - PAD}" text-anchor="end" font-size="10">{ax.ylo:.3g}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 4}" text-anchor="end" font-size="10">{ax.yhi:.3g}</text>',
    ]


def _finite(v):
    v = np.asarray(v, dtype=float)
    return v[np.isfinite(v)]


def curve_svg(records, metric="return", title=None):
    """Mean line with a +/- one std band across seeds, per episode index."""
    eps = sorted({r["episode"] for r in records})
    mean, std = [], []
    for e in eps:
        v = np.array([r[metric] for r in records if r["episode"] == e], dtype=float)
        mean.append(v.mean())
        std.append(v.std())
    mean, std = np.array(mean), np.array(std)
    lo, hi = mean - std, mean + std
    ax = _Axes(min(eps), max(eps), float(np.nanmin(lo)), float(np.nanmax(hi)))
    parts = _frame(ax, title or f"{metric} (mean and std over seeds)", "episode", metric)
    band = ax.pts(eps, hi) + " " + ax.pts(eps[::-1], lo[::-1])
    parts.append(f'<polygon class="band" points="{band}" fill="steelblue" fill-opacity="0.25" stroke="none"/>')
    parts.append(f'<polyline class="mean" points="{ax.pts(eps, mean)}" fill="none" stroke="steelblue"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def calibration_svg(records, title="calibration"):
    """Scatter of max_a Q(s0, a) against the discounted Monte Carlo return, with the diagonal."""
    q = np.array([r["max_q_s0"] for r in records], dtype=float)
    mc = np.array([r["mc_return"] for r in records], dtype=float)
    ok = np.isfinite(q) & np.isfinite(mc)
    q, mc = q[ok], mc[ok]
    both = np.concatenate([q, mc]) if q.size else np.array([0.0, 1.0])
    lo, hi = float(both.min()), float(both.max())
    ax = _Axes(lo, hi, lo, hi)
    parts = _frame(ax, title, "Monte Carlo return", "max Q(s0, a)")
    parts.append(f'<line class="diagonal" x1="{ax.x(lo):.2f}" y1="{ax.y(lo):.2f}" x2="{ax.x(hi):.2f}" '
                 f'y2="{ax.y(hi):.2f}" stroke="gray" stroke-dasharray="4 3"/>')
    for a, b in zip(mc, q):
        parts.append(f'<circle class="point" cx="{ax.x(a):.2f}" cy="{ax.y(b):.2f}" r="3" fill="darkorange"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def binned_svg(records, metric="max_angle_deg", num_bins=10, title=None):
    """Per-return-bin mean of a safety metric; empty bins are left out."""
    rows = [r for r in records if math.isfinite(r[metric])]
    if not rows:
        raise ValueError(f"no finite values of {metric} to bin")
    bins = bin_by_return([r["return"] for r in rows], {metric: [r[metric] for r in rows]}, num_bins)
    present = [b for b in bins if b is not None]
    xs = [(b["lo"] + b["hi"]) / 2 for b in present]
    ys = [b[metric] for b in present]
    rets = _finite([r["return"] for r in rows])
    ax = _Axes(float(rets.min()), float(rets.max()), 0.0, max(ys) * 1.1 if max(ys) > 0 else 1.0)
    parts = _frame(ax, title or f"{metric} by return bin", "return", metric)
    for b, x, y in zip(present, xs, ys):
        x0, x1 = ax.x(b["lo"]), ax.x(b["hi"])
        top = ax.y(y)
        parts.append(f'<rect class="bin" x="{x0:.2f}" y="{top:.2f}" width="{max(x1 - x0 - 1, 1):.2f}" '
                     f'height="{ax.y(0) - top:.2f}" fill="seagreen"/>')
    parts.append(f'<polyline class="mean" points="{ax.pts(xs, ys)}" fill="none" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
