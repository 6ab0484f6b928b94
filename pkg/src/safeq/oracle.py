"""Brute-force reference computations used to check the learners.

Everything here is written as plain loops over states, actions and successor
states so it shares no code path with the vectorized targets it checks.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import ValidationError, discounted_return


@dataclass(frozen=True)
class OracleReport:
    max_abs_error: float
    iterations: int
    converged: bool


def _reg_value(q_row, prior_row, lam):
    m = max(q_row)
    total = 0.0
    for qa, pa in zip(q_row, prior_row):
        if pa <= 0:
            raise ValidationError("prior entries must be strictly positive")
        total += pa * math.exp((qa - m) / lam)
    return m + lam * math.log(total)


def exact_bellman_apply(mdp, q, prior, lam):
    """``(T Q)(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) 1(s') lam ln sum_a' prior e^{Q(s',a')/lam}``."""
    S, A = mdp.num_states, mdp.num_actions
    q = np.asarray(q, dtype=float)
    prior = np.asarray(prior, dtype=float)
    terminal = set(int(s) for s in mdp.terminal_states)
    v = [0.0 if s2 in terminal else _reg_value(list(q[s2]), list(prior[s2]), lam) for s2 in range(S)]
    out = np.empty((S, A))
    for s in range(S):
        for a in range(A):
            acc = 0.0
            for s2 in range(S):
                acc += mdp.transition[s, a, s2] * v[s2]
            out[s, a] = mdp.reward[s, a] + mdp.gamma * acc
    return out


def value_iteration_fixed_point(mdp, prior, lam, tol=1e-10, q0=None, max_iter=100000):
    """Iterate the operator until successive iterates differ by at most ``tol (1-gamma)/gamma``."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    q = np.zeros((mdp.num_states, mdp.num_actions)) if q0 is None else np.array(q0, dtype=float)
    g = mdp.gamma
    stop = tol * (1 - g) / g if g > 0 else math.inf
    for it in range(1, max_iter + 1):
        nq = exact_bellman_apply(mdp, q, prior, lam)
        delta = float(np.max(np.abs(nq - q)))
        q = nq
        if delta <= stop:
            resid = float(np.max(np.abs(exact_bellman_apply(mdp, q, prior, lam) - q)))
            return q, OracleReport(resid, it, resid <= tol)
    resid = float(np.max(np.abs(exact_bellman_apply(mdp, q, prior, lam) - q)))
    return q, OracleReport(resid, max_iter, False)


def contraction_check(mdp, prior, lam, q1, q2):
    lhs = np.max(np.abs(exact_bellman_apply(mdp, q1, prior, lam) - exact_bellman_apply(mdp, q2, prior, lam)))
    rhs = mdp.gamma * np.max(np.abs(np.asarray(q1) - np.asarray(q2)))
    return bool(lhs <= rhs + 1e-12)


def kl_objective(pi, q_row, prior_row, lam):
    """``sum pi Q - lam KL(pi || prior)`` with ``0 ln 0 = 0``."""
    val = 0.0
    for p, qa, b in zip(pi, q_row, prior_row):
        if p > 0:
            val += p * qa - lam * p * math.log(p / b)
    return val


@functools.lru_cache(maxsize=8)
def _simplex_grid(n, steps):
    """All points of the barycentric grid with spacing ``1/steps``, shape (m, n)."""
    axes = np.meshgrid(*[np.arange(steps + 1)] * (n - 1), indexing="ij")
    head = np.stack([ax.ravel() for ax in axes], axis=1) if n > 1 else np.zeros((1, 0), dtype=int)
    head = head[head.sum(axis=1) <= steps]
    pts = np.concatenate([head, steps - head.sum(axis=1, keepdims=True)], axis=1) / steps
    pts.setflags(write=False)
    return pts


def _grid_objective(pts, q_row, prior_row, lam):
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(pts > 0, pts * np.log(pts / np.asarray(prior_row)), 0.0)
    return pts @ np.asarray(q_row) - lam * ent.sum(axis=1)


def _golden(f, lo, hi, iters=80):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def grid_kl_maximizer(q_row, prior_row, lam, resolution=200, refine_passes=20, value_tol=1e-5):
    """Maximize the KL-regularized objective over the simplex by grid search plus local refinement.

    A barycentric grid of step ``1/resolution`` gives a start point; then mass
    is moved between every pair of coordinates with a golden-section line
    search until a pass gains less than ``1e-15``. Returns ``(pi, value, ok)``
    where ``ok`` reports whether the last pass changed the value by less than
    ``value_tol`` (a failed refinement means the grid was too coarse).
    """
    q_row = [float(x) for x in q_row]
    prior_row = [float(x) for x in prior_row]
    n = len(q_row)
    if n > 4:
        raise ValidationError("grid search is limited to at most 4 actions")
    pts = _simplex_grid(n, resolution)
    vals = _grid_objective(pts, q_row, prior_row, lam)
    k = int(np.argmax(vals))
    pi = pts[k].copy()
    best_val = kl_objective(pi, q_row, prior_row, lam)
    last_gain = math.inf
    for _ in range(refine_passes):
        start = best_val
        for i, j in itertools.permutations(range(n), 2):
            if i > j:
                continue
            total = pi[i] + pi[j]
            if total <= 0:
                continue

            def f(t, i=i, j=j, total=total):
                trial = pi.copy()
                trial[i], trial[j] = t, total - t
                return kl_objective(trial, q_row, prior_row, lam)

            t = _golden(f, 0.0, total)
            v = f(t)
            if v > best_val:
                pi[i], pi[j] = t, total - t
                best_val = v
        last_gain = best_val - start
        if last_gain < 1e-15:
            break
    return pi, best_val, last_gain < value_tol


def policy_evaluation(mdp, policy, prior=None, lam=0.0):
    """Solve ``V = r_pi + gamma P_pi V`` with ``r_pi = sum_a pi R - lam KL(pi || prior)``."""
    S, A = mdp.num_states, mdp.num_actions
    policy = np.asarray(policy, dtype=float)
    cont = mdp.continuation
    r = np.zeros(S)
    P = np.zeros((S, S))
    for s in range(S):
        for a in range(A):
            p = policy[s, a]
            r[s] += p * mdp.reward[s, a]
            if lam > 0 and p > 0:
                r[s] -= lam * p * math.log(p / prior[s, a])
            P[s] += p * mdp.transition[s, a] * cont
    M = np.eye(S) - mdp.gamma * P
    try:
        return np.linalg.solve(M, r)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"policy evaluation system is singular: {exc}") from exc


def eval_kl_return(mdp, policy, prior, lam, init_dist=None):
    """Normalized KL-regularized return ``(1 - gamma) mu0 . V``."""
    S = mdp.num_states
    mu0 = np.full(S, 1.0 / S) if init_dist is None else np.asarray(init_dist, dtype=float)
    v = policy_evaluation(mdp, policy, prior, lam)
    return float((1 - mdp.gamma) * mu0 @ v)


def mc_policy_return(env, policy, episodes, gamma, rng):
    """Mean discounted and undiscounted returns of ``policy(state) -> action`` over rollouts."""
    if episodes < 1:
        raise ValidationError("episodes must be at least 1")
    disc, undisc = [], []
    for _ in range(episodes):
        s = env.reset(rng)
        rewards = []
        while not env.done:
            t = env.step(policy(s))
            rewards.append(t.reward)
            s = t.next_state
        disc.append(discounted_return(rewards, gamma))
        undisc.append(float(sum(rewards)))
    return float(np.mean(disc)), float(np.mean(undisc))


# ---------------------------------------------------------------- suites

def _closed_form_value(q_row, prior_row, lam):
    q = np.asarray(q_row, dtype=float)
    z = q / lam + np.log(prior_row)
    m = z.max()
    return lam * (m + math.log(np.exp(z - m).sum()))


def _closed_form_policy(q_row, prior_row, lam):
    z = np.asarray(q_row, dtype=float) / lam + np.log(prior_row)
    p = np.exp(z - z.max())
    return p / p.sum()


def check_closed_form(rng, instances=200):
    """Largest value and total-variation errors between the closed form and grid search."""
    worst_v = worst_tv = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 5))
        lam = float(rng.uniform(0.05, 10.0))
        q = rng.uniform(-5, 5, n)
        prior = rng.dirichlet(np.ones(n)) * 0.98 + 0.02 / n
        pi, val, _ = grid_kl_maximizer(q, prior, lam)
        worst_v = max(worst_v, abs(val - _closed_form_value(q, prior, lam)))
        worst_tv = max(worst_tv, 0.5 * float(np.abs(pi - _closed_form_policy(q, prior, lam)).sum()))
    return worst_v, worst_tv


def random_instance(rng, max_states=6, max_actions=4):
    from .core import random_mdp, random_positive_rows

    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    mdp = random_mdp(rng, S, A, float(rng.uniform(0.5, 0.95)))
    prior = random_positive_rows(rng, S, A)
    lam = float(rng.uniform(0.1, 5.0))
    return mdp, prior, lam


def check_contraction(rng, instances=100, pairs=5):
    """Count of contraction violations over random instances and Q pairs."""
    bad = 0
    for _ in range(instances):
        mdp, prior, lam = random_instance(rng)
        for _ in range(pairs):
            q1 = rng.uniform(-10, 10, (mdp.num_states, mdp.num_actions))
            q2 = rng.uniform(-10, 10, q1.shape)
            bad += not contraction_check(mdp, prior, lam, q1, q2)
    return bad


def check_uniqueness(rng, instances=100, tol=1e-9):
    """Largest gap between fixed points reached from two different starts."""
    worst = 0.0
    for _ in range(instances):
        mdp, prior, lam = random_instance(rng)
        qa, ra = value_iteration_fixed_point(mdp, prior, lam, tol)
        qb, rb = value_iteration_fixed_point(mdp, prior, lam, tol, q0=rng.uniform(-50, 50, qa.shape))
        if not (ra.converged and rb.converged):
            return math.inf
        worst = max(worst, float(np.max(np.abs(qa - qb))) / (2 * tol))
    return worst


def check_optimality(rng, instances=20, random_policies=50):
    """Violations of J(pi*) >= J(pi) against the prior and random policies."""
    bad = 0
    for _ in range(instances):
        mdp, prior, lam = random_instance(rng)
        q, _ = value_iteration_fixed_point(mdp, prior, lam, 1e-11)
        best = np.array([_closed_form_policy(q[s], prior[s], lam) for s in range(mdp.num_states)])
        j_star = eval_kl_return(mdp, best, prior, lam)
        others = [prior] + [rng.dirichlet(np.ones(mdp.num_actions), mdp.num_states) for _ in range(random_policies)]
        bad += sum(eval_kl_return(mdp, pi, prior, lam) > j_star + 1e-10 for pi in others)
    return bad


def run_suite(seed=0, log=print):
    """Run every oracle check; returns True when all pass."""
    rng = np.random.default_rng(seed)
    ok = True
    v, tv = check_closed_form(rng)
    passed = v <= 1e-5 and tv <= 1e-3
    log(f"closed form vs grid search: max value error {v:.3g}, max TV {tv:.3g} -> {'PASS' if passed else 'FAIL'}")
    ok &= passed
    bad = check_contraction(rng)
    log(f"contraction: {bad} violations -> {'PASS' if bad == 0 else 'FAIL'}")
    ok &= bad == 0
    ratio = check_uniqueness(rng)
    log(f"fixed point uniqueness: worst gap / (2 tol) {ratio:.3g} -> {'PASS' if ratio <= 1 else 'FAIL'}")
    ok &= ratio <= 1
    bad = check_optimality(rng)
    log(f"regularized optimality: {bad} violations -> {'PASS' if bad == 0 else 'FAIL'}")
    ok &= bad == 0
    return bool(ok)
