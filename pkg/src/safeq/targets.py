"""Bellman targets: standard max, soft (log-sum-exp) and the KL-regularized safe target.

All row-wise reductions take a 2-D array of Q rows (one per sample). The
regularized value of a row q under prior w is

    lam * ln sum_a w[a] * exp(q[a] / lam)

computed as ``m + lam * ln sum_a w[a] exp((q[a] - m) / lam)`` with
``m = max_a q[a]`` so that small ``lam`` does not overflow.
"""
from __future__ import annotations

import numpy as np

from .core import ValidationError


def _rows(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def weighted_logsumexp(q, weights, lam):
    """Row-wise ``lam * ln sum w exp(q / lam)``; ``weights`` may be None (all ones)."""
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    q = _rows(q)
    m = q.max(axis=1)
    e = np.exp((q - m[:, None]) / lam)
    s = e.sum(axis=1) if weights is None else (_rows(weights) * e).sum(axis=1)
    return m + lam * np.log(s)


def log_mean_exp(q, lam):
    """Row-wise ``lam * ln mean exp(q / lam)`` (uniform weights over samples)."""
    q = _rows(q)
    return weighted_logsumexp(q, None, lam) - lam * np.log(q.shape[1])


def check_prior(prior):
    prior = _rows(prior)
    if np.any(prior <= 0) or not np.all(np.isfinite(prior)):
        raise ValidationError("smoothed behavior probabilities must be strictly positive (KL undefined)")
    if np.any(np.abs(prior.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError("smoothed behavior rows must sum to 1")
    return prior


def safe_value(q, prior, lam):
    """Closed-form max over the simplex of ``pi.q - lam * KL(pi || prior)``."""
    return weighted_logsumexp(q, check_prior(prior), lam)


def soft_value(q, lam):
    return weighted_logsumexp(q, None, lam)


def standard_q_target(r, next_q_row, terminal, gamma):
    """``r + 1(s') * gamma * max_a Q(s', a)``."""
    if terminal:
        return float(r)
    return float(r + gamma * np.max(np.asarray(next_q_row, dtype=float)))


def soft_q_target(r, next_q_row, terminal, gamma, lam):
    """``r + 1(s') * gamma * lam * ln sum_a exp(Q(s', a) / lam)``."""
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    if terminal:
        return float(r)
    return float(r + gamma * soft_value(next_q_row, lam)[0])


def safe_target_discrete(r, next_q_row, prior_row, terminal, gamma, lam):
    """Safe target ``r + 1(s') * gamma * lam * ln sum_a prior(a|s') exp(Q(s',a) / lam)``."""
    prior_row = check_prior(prior_row)
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    if terminal:
        return float(r)
    return float(r + gamma * weighted_logsumexp(next_q_row, prior_row, lam)[0])


def mc_safe_target_continuous(r, sampled_q, terminal, gamma, lam):
    """Monte Carlo safe target from Q values at N actions sampled from the smoothed behavior."""
    if terminal:
        return float(r)
    return float(r + gamma * log_mean_exp(np.asarray(sampled_q, dtype=float).ravel(), lam)[0])


def batch_targets(kind, rewards, next_q, continuation, gamma, lam=None, prior=None):
    """Vectorised targets for a batch. ``continuation`` is 1 - terminal."""
    if kind == "standard":
        v = _rows(next_q).max(axis=1)
    elif kind == "soft":
        v = soft_value(next_q, lam)
    elif kind == "safe":
        v = safe_value(next_q, prior, lam)
    elif kind == "mc_safe":
        v = log_mean_exp(next_q, lam)
    else:
        raise ValidationError(f"unknown target kind {kind!r}")
    return np.asarray(rewards, dtype=float) + np.asarray(continuation, dtype=float) * gamma * v
