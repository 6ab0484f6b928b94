"""Safety and learning metrics computed from per-episode records."""
from __future__ import annotations

import math

import numpy as np

from .core import ValidationError

RISK_MARGIN_DEG = 7.0
UNSAFE_DEG = 9.0


def _nonempty(x, what):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValidationError(f"{what} must be non-empty")
    return x


def success_rate(flags, window=100):
    """Fraction of successes over the last ``window`` entries."""
    f = _nonempty(flags, "success window")
    return float(f[-window:].mean())


def sliding_success(flags, window=100):
    """Trailing-window success rate after every episode (shorter windows at the start)."""
    f = np.asarray(flags, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(f)])
    idx = np.arange(1, f.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def episodes_to_threshold(flags, threshold=0.99, window=100):
    """1-based episode at which a full trailing window first reaches ``threshold``; ``None`` if never."""
    f = np.asarray(flags, dtype=float)
    if f.size < window:
        return None
    c = np.concatenate([[0.0], np.cumsum(f)])
    rates = (c[window:] - c[:-window]) / window
    hit = np.flatnonzero(rates >= threshold - 1e-12)
    return int(hit[0] + window) if hit.size else None


def risk_severity(angles_deg, theta_margin=RISK_MARGIN_DEG):
    """Mean excess of |theta| over the margin, in degrees."""
    a = np.abs(_nonempty(angles_deg, "angle trajectory"))
    return float(np.maximum(0.0, a - theta_margin).mean())


def unsafe_episode_rate(max_angles_deg, threshold=UNSAFE_DEG):
    """Fraction of episodes whose max |theta| exceeded ``threshold`` degrees."""
    m = _nonempty(max_angles_deg, "episode records")
    return float((np.abs(m) > threshold).mean())


def relative_calibration_error(q_values, mc_returns):
    q = np.asarray(q_values, dtype=float)
    mc = np.asarray(mc_returns, dtype=float)
    return np.abs(q - mc) / np.maximum(1.0, mc)


def bin_by_return(returns, metrics, num_bins=10):
    """Per-bin means of each metric over equal-width return bins.

    ``metrics`` maps a name to an array aligned with ``returns``. Bins span
    [min, max] with the right edge closed on the last bin. Returns a list of
    ``num_bins`` entries; empty bins are ``None``, others hold ``lo``, ``hi``,
    ``count`` and the metric means.
    """
    r = _nonempty(returns, "records")
    lo, hi = float(r.min()), float(r.max())
    width = (hi - lo) / num_bins
    if width > 0:
        idx = np.minimum(((r - lo) / width).astype(int), num_bins - 1)
    else:
        idx = np.zeros(r.size, dtype=int)
    cols = {k: np.asarray(v, dtype=float) for k, v in metrics.items()}
    out = []
    for b in range(num_bins):
        sel = idx == b
        if not sel.any():
            out.append(None)
            continue
        row = {"bin": b, "lo": lo + b * width, "hi": lo + (b + 1) * width, "count": int(sel.sum())}
        for k, v in cols.items():
            row[k] = float(v[sel].mean())
        out.append(row)
    return out


def top_bin_comparison(returns_a, metric_a, returns_b, metric_b, num_bins=10):
    """Compare a metric between two methods at the highest return bin.

    Both sets are binned on a shared grid spanning their pooled returns. The
    comparison uses the highest bin that both occupy; ``(mean_a, mean_b)`` is
    returned, or ``None`` if no bin is shared.
    """
    ra = np.asarray(returns_a, dtype=float)
    rb = np.asarray(returns_b, dtype=float)
    pooled = np.concatenate([ra, rb])
    lo, hi = float(pooled.min()), float(pooled.max())
    width = (hi - lo) / num_bins

    def which(r):
        if width <= 0:
            return np.zeros(r.size, dtype=int)
        return np.minimum(((r - lo) / width).astype(int), num_bins - 1)

    ia, ib = which(ra), which(rb)
    shared = sorted(set(ia.tolist()) & set(ib.tolist()))
    if not shared:
        return None
    top = shared[-1]
    ma = np.asarray(metric_a, dtype=float)[ia == top]
    mb = np.asarray(metric_b, dtype=float)[ib == top]
    return float(ma.mean()), float(mb.mean())


def fmt_float(x, digits=9):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.{digits}g}"
