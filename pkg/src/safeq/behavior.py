"""Behavior policies supported on the safe set, their smoothing, and safe datasets.

Hand-crafted (HC) policies come from a rule table (FrozenLake) or a PD
controller and networks imitating it (CartPole). Dataset-based (DS) policies
are fitted by maximum likelihood on a :class:`SafeDataset`.
"""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import Transition, ValidationError, sample_discrete, validate_probs
from .envs import (
    CARTPOLE_STATE_SCALE,
    FrozenLakeEnv,
    CartPoleEnv,
    GOAL,
    HOLES,
    fl_is_terminal,
    fl_successor,
    is_unsafe,
)
from .neural import DenseNet, make_optimizer

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------- discrete

def smooth_rows(rows, eta):
    """``(1 - eta) * rows + eta / |A|``, row-wise."""
    if not 0.0 < eta < 1.0:
        raise ValidationError(f"eta must lie in (0, 1), got {eta}")
    rows = np.asarray(rows, dtype=float)
    return (1.0 - eta) * rows + eta / rows.shape[-1]


@dataclass
class TabularBehaviorPolicy:
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        for s, row in enumerate(self.table):
            self.table[s] = validate_probs(row, name=f"behavior row {s}")

    @property
    def num_actions(self):
        return self.table.shape[1]

    def proba(self, states):
        return self.table[np.asarray(states, dtype=int)]

    def sample(self, state, rng):
        return sample_discrete(self.table[int(state)], rng)

    def safe_mask(self, state):
        return self.table[int(state)] > 0


@dataclass
class SmoothedDiscretePolicy:
    base: object
    eta: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValidationError(f"eta must lie in (0, 1), got {self.eta}")

    def proba(self, states):
        return smooth_rows(self.base.proba(states), self.eta)


def smooth_discrete(base, eta):
    return SmoothedDiscretePolicy(base, eta)


def _distance_to_goal():
    """BFS step count to the goal over hole-free FrozenLake cells."""
    dist = {GOAL: 0}
    frontier = deque([GOAL])
    while frontier:
        t = frontier.popleft()
        for s in range(16):
            if s in dist or fl_is_terminal(s):
                continue
            if any(fl_successor(s, a) == t for a in range(4)):
                dist[s] = dist[t] + 1
                frontier.append(s)
    return dist


def hc_frozenlake_policy(on_path_weight: float = 3.0) -> TabularBehaviorPolicy:
    """Rule table: zero mass on hole-bound moves, 3:1 preference for the shortest-path move."""
    dist = _distance_to_goal()
    table = np.full((16, 4), 0.25)
    for s in range(16):
        if fl_is_terminal(s):
            continue
        safe = [a for a in range(4) if fl_successor(s, a) not in HOLES]
        if not safe:
            raise ValidationError(f"state {s} has no safe action")
        best = min(safe, key=lambda a: (dist.get(fl_successor(s, a), math.inf), a))
        w = np.zeros(4)
        for a in safe:
            w[a] = on_path_weight if a == best else 1.0
        table[s] = w / w.sum()
    return TabularBehaviorPolicy(table)


def safe_epsilon_greedy(q_row, safe_mask, epsilon, rng):
    """Greedy over safe actions w.p. 1 - epsilon, else uniform over safe actions."""
    mask = np.asarray(safe_mask, dtype=bool)
    safe = np.flatnonzero(mask)
    if safe.size == 0:
        raise ValidationError("safe action mask is empty")
    if rng.random() < epsilon:
        return int(safe[rng.integers(safe.size)])
    q = np.asarray(q_row, dtype=float)
    return int(safe[np.argmax(q[safe])])


def collect_action(behavior, state, rng, epsilon=0.0, q_row=None, mode="behavior"):
    """Data-collection action of the discrete HC-safe + epsilon-greedy layer.

    ``mode="behavior"`` samples the behavior policy and explores uniformly over
    its safe actions w.p. epsilon. ``mode="q_greedy"`` runs
    :func:`safe_epsilon_greedy` on the learner's Q row instead.
    """
    mask = behavior.safe_mask(state)
    if mode == "q_greedy":
        return safe_epsilon_greedy(q_row, mask, epsilon, rng)
    if mode != "behavior":
        raise ValidationError(f"unknown collection mode {mode!r}")
    if epsilon > 0 and rng.random() < epsilon:
        safe = np.flatnonzero(mask)
        return int(safe[rng.integers(safe.size)])
    return behavior.sample(state, rng)


# ---------------------------------------------------------------- controller

@dataclass(frozen=True)
class PidController:
    """State-feedback balancing controller, output in [-bound, bound] before force scaling.

    The gains were picked by a small manual sweep; with them a 500-step
    closed-loop rollout from any start in [-0.05, 0.05]^4 stays below 3 degrees.
    """

    k_theta: float = 12.0
    k_theta_dot: float = 2.0
    k_x: float = 0.5
    k_x_dot: float = 1.0
    bound: float = 1.0

    def raw(self, states):
        s = np.asarray(states, dtype=float)
        return self.k_theta * s[..., 2] + self.k_theta_dot * s[..., 3] + self.k_x * s[..., 0] + self.k_x_dot * s[..., 1]

    def __call__(self, states):
        return np.clip(self.raw(states), -self.bound, self.bound)


def pid_force(controller: PidController, state) -> float:
    return float(controller(np.asarray(state, dtype=float)))


@dataclass
class PidDiscreteBehavior:
    """Two-action HC policy built on the controller output u.

    P(push right) = sigmoid(u / temperature). When |u| exceeds
    ``mask_threshold`` only the controller's direction counts as safe.
    """

    controller: PidController = PidController()
    temperature: float = 0.2
    mask_threshold: float = 0.4

    num_actions = 2

    def _masks(self, u):
        u = np.atleast_1d(u)
        mask = np.ones((u.size, 2), dtype=bool)
        mask[u > self.mask_threshold, 0] = False
        mask[u < -self.mask_threshold, 1] = False
        return mask

    def proba(self, states):
        s = np.atleast_2d(np.asarray(states, dtype=float))
        u = self.controller.raw(s)
        p_right = 1.0 / (1.0 + np.exp(-np.clip(u / self.temperature, -60, 60)))
        p = np.stack([1.0 - p_right, p_right], axis=1)
        p[~self._masks(u)] = 0.0
        return p / p.sum(axis=1, keepdims=True)

    def safe_mask(self, state):
        return self._masks(self.controller.raw(np.asarray(state, dtype=float)))[0]

    def sample(self, state, rng):
        return int(rng.random() < self.proba(state)[0, 1])


# ---------------------------------------------------------------- learned policies

def _batches(n, batch_size, n_steps, rng):
    for _ in range(n_steps):
        yield rng.integers(0, n, size=min(batch_size, n))


class _NetPolicyMixin:
    """Shared plumbing for the network-backed behavior estimators."""

    def _scale(self, X):
        X = check_array(X, ensure_2d=False, dtype=float)
        X = np.atleast_2d(X)
        scale = self.state_scale if self.state_scale is not None else np.ones(X.shape[1])
        return X / np.asarray(scale, dtype=float)

    def _build(self, in_dim, out_dim):
        rng = np.random.default_rng(self.random_state)
        self.net_ = DenseNet([in_dim, *self.hidden, out_dim], rng=rng)
        self.optimizer_ = make_optimizer(self.optimizer, self.lr)
        self.n_features_in_ = in_dim

    def _run_ascent(self, X, A, rng):
        """Mini-batch gradient ascent on the summed log-likelihood."""
        self.loss_curve_ = []
        for idx in _batches(len(X), self.batch_size, self.n_steps, rng):
            ll, grads = self.loglik_and_grad(X[idx], A[idx], scaled=True)
            self.optimizer_.step(self.net_.params, [-g for g in grads])
            self.loss_curve_.append(-ll / len(idx))
            if not math.isfinite(ll):
                raise ValidationError("behavior training diverged (non-finite log-likelihood)")
        return self


class SoftmaxBehavior(_NetPolicyMixin, BaseEstimator):
    """Discrete DS-safe policy: softmax over a network (``n_states=None``) or a logit table."""

    def __init__(self, n_actions=2, n_states=None, hidden=(64, 64), lr=1e-3, n_steps=2000,
                 batch_size=64, optimizer="adam", state_scale=None, random_state=0):
        self.n_actions = n_actions
        self.n_states = n_states
        self.hidden = hidden
        self.lr = lr
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.state_scale = state_scale
        self.random_state = random_state

    def _init(self, X):
        if self.n_states is not None:
            self.logits_ = np.zeros((self.n_states, self.n_actions))
            self.optimizer_ = make_optimizer(self.optimizer, self.lr)
            self.n_features_in_ = 1
        else:
            self._build(X.shape[1], self.n_actions)

    @property
    def _param_list(self):
        return [self.logits_] if self.n_states is not None else self.net_.params

    def _logits(self, X, cache=False):
        if self.n_states is not None:
            return self.logits_[np.asarray(X, dtype=int).ravel()]
        return self.net_.forward(X, cache=True) if cache else self.net_.predict(X)

    def loglik_and_grad(self, X, A, scaled=False):
        if self.n_states is None and not scaled:
            X = self._scale(X)
        A = np.asarray(A, dtype=int).ravel()
        z = self._logits(X, cache=True)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        ll = float(logp[np.arange(len(A)), A].sum())
        g = -np.exp(logp)
        g[np.arange(len(A)), A] += 1.0
        if self.n_states is not None:
            grad = np.zeros_like(self.logits_)
            np.add.at(grad, np.asarray(X, dtype=int).ravel(), g)
            return ll, [grad]
        grads, _ = self.net_.backward(g)
        return ll, grads

    def fit(self, X, y):
        X = np.asarray(X)
        if self.n_states is None:
            X = self._scale(X)
        y = np.asarray(y, dtype=int).ravel()
        self._init(X)
        rng = np.random.default_rng(self.random_state)
        self.loss_curve_ = []
        for idx in _batches(len(X), self.batch_size, self.n_steps, rng):
            ll, grads = self.loglik_and_grad(X[idx], y[idx], scaled=True)
            self.optimizer_.step(self._param_list, [-g for g in grads])
            self.loss_curve_.append(-ll / len(idx))
        return self

    def proba(self, states):
        check_is_fitted(self, "optimizer_")
        X = states if self.n_states is not None else self._scale(states)
        z = self._logits(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    predict_proba = proba

    def predict(self, states):
        return np.argmax(self.proba(states), axis=1)

    def sample(self, state, rng):
        return sample_discrete(self.proba(np.atleast_1d(state) if self.n_states is not None else state)[0], rng)

    def safe_mask(self, state):
        return np.ones(self.n_actions, dtype=bool)


class MeanNoiseBehavior(_NetPolicyMixin, BaseEstimator):
    """``a = clip(mu_b(s) + w, low, high)`` with ``w ~ N(0, sigma_m^2 I)``.

    Fitting maximizes the Gaussian log-likelihood with fixed ``sigma_m``, i.e.
    least-squares regression of the mean network. ``smoothing_sigma`` is the
    width of the smoothed prior used in targets (defaults to ``sigma_m``).
    """

    def __init__(self, sigma_m=0.1, smoothing_sigma=None, hidden=(64, 64), lr=1e-3, n_steps=3000,
                 batch_size=64, optimizer="adam", state_scale=tuple(CARTPOLE_STATE_SCALE),
                 low=-1.0, high=1.0, random_state=0):
        self.sigma_m = sigma_m
        self.smoothing_sigma = smoothing_sigma
        self.hidden = hidden
        self.lr = lr
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.state_scale = state_scale
        self.low = low
        self.high = high
        self.random_state = random_state

    def initialize(self, state_dim, action_dim=1):
        self._build(state_dim, action_dim)
        self.action_dim_ = action_dim
        return self

    def loglik_and_grad(self, X, A, scaled=False):
        if not scaled:
            X = self._scale(X)
        A = np.asarray(A, dtype=float).reshape(len(X), -1)
        mu = self.net_.forward(X)
        diff = A - mu
        s2 = self.sigma_m**2
        ll = float(-0.5 * (diff**2).sum() / s2 - A.size * (0.5 * LOG_2PI + math.log(self.sigma_m)))
        grads, _ = self.net_.backward(diff / s2)
        return ll, grads

    def fit(self, X, y):
        X = self._scale(X)
        y = np.asarray(y, dtype=float).reshape(len(X), -1)
        self.initialize(X.shape[1], y.shape[1])
        return self._run_ascent(X, y, np.random.default_rng(self.random_state))

    def mean(self, states):
        check_is_fitted(self, "net_")
        return self.net_.predict(self._scale(states))

    def predict(self, states):
        return np.clip(self.mean(states), self.low, self.high)

    def sample(self, states, rng):
        mu = self.mean(states)
        return np.clip(mu + self.sigma_m * rng.standard_normal(mu.shape), self.low, self.high)

    def sample_smoothed(self, states, n, rng):
        """``n`` draws per state from N(mu_b(s), sigma^2 I), clipped; shape (len, n, d)."""
        sigma = self.sigma_m if self.smoothing_sigma is None else self.smoothing_sigma
        mu = self.mean(states)
        eps = rng.standard_normal((mu.shape[0], n, mu.shape[1]))
        return np.clip(mu[:, None, :] + sigma * eps, self.low, self.high)

    def log_density(self, states, actions):
        mu = self.mean(states)
        a = np.asarray(actions, dtype=float).reshape(mu.shape)
        d = mu.shape[1]
        return -0.5 * ((a - mu) ** 2).sum(axis=1) / self.sigma_m**2 - d * (0.5 * LOG_2PI + math.log(self.sigma_m))

    def log_density_grad_action(self, states, actions):
        mu = self.mean(states)
        return -(np.asarray(actions, dtype=float).reshape(mu.shape) - mu) / self.sigma_m**2


class TanhGaussianBehavior(_NetPolicyMixin, BaseEstimator):
    """``a = tanh(z)``, ``z ~ N(mu_b(s), sigma_b(s)^2 I)``; the net outputs (mu, log sigma)."""

    def __init__(self, sigma_floor=0.02, sigma_max=2.0, action_margin=1e-3, hidden=(64, 64), lr=1e-3,
                 n_steps=3000, batch_size=64, optimizer="adam", state_scale=tuple(CARTPOLE_STATE_SCALE),
                 random_state=0):
        self.sigma_floor = sigma_floor
        self.sigma_max = sigma_max
        self.action_margin = action_margin
        self.hidden = hidden
        self.lr = lr
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.state_scale = state_scale
        self.random_state = random_state

    def initialize(self, state_dim, action_dim=1):
        self._build(state_dim, 2 * action_dim)
        self.action_dim_ = action_dim
        self.sigma_clamped_ = 0
        return self

    def _split(self, out):
        d = out.shape[1] // 2
        raw = out[:, d:]
        lo, hi = math.log(self.sigma_floor), math.log(self.sigma_max)
        clamped = (raw < lo) | (raw > hi)
        return out[:, :d], np.clip(raw, lo, hi), clamped

    def loglik_and_grad(self, X, A, scaled=False):
        if not scaled:
            X = self._scale(X)
        A = np.asarray(A, dtype=float).reshape(len(X), -1)
        if np.any(np.abs(A) >= 1.0):
            raise ValidationError("tanh-Gaussian log-likelihood needs |a| < 1")
        z = np.arctanh(A)
        out = self.net_.forward(X)
        mu, log_sigma, clamped = self._split(out)
        if clamped.any():
            self.sigma_clamped_ = getattr(self, "sigma_clamped_", 0) + int(clamped.sum())
        inv_var = np.exp(-2.0 * log_sigma)
        diff = z - mu
        ll = float((-0.5 * diff**2 * inv_var - log_sigma - 0.5 * LOG_2PI - np.log1p(-A**2)).sum())
        g_mu = diff * inv_var
        g_ls = np.where(clamped, 0.0, diff**2 * inv_var - 1.0)
        grads, _ = self.net_.backward(np.concatenate([g_mu, g_ls], axis=1))
        return ll, grads

    def fit(self, X, y):
        X = self._scale(X)
        m = 1.0 - self.action_margin
        y = np.clip(np.asarray(y, dtype=float).reshape(len(X), -1), -m, m)
        self.initialize(X.shape[1], y.shape[1])
        self._run_ascent(X, y, np.random.default_rng(self.random_state))
        if self.sigma_clamped_:
            warnings.warn(f"sigma_b hit its clamp {self.sigma_clamped_} times during fitting", RuntimeWarning)
        return self

    def params_at(self, states):
        check_is_fitted(self, "net_")
        mu, log_sigma, _ = self._split(self.net_.predict(self._scale(states)))
        return mu, np.exp(log_sigma)

    def predict(self, states):
        return np.tanh(self.params_at(states)[0])

    def sample(self, states, rng):
        mu, sigma = self.params_at(states)
        return np.tanh(mu + sigma * rng.standard_normal(mu.shape))

    def sample_smoothed(self, states, n, rng):
        mu, sigma = self.params_at(states)
        eps = rng.standard_normal((mu.shape[0], n, mu.shape[1]))
        return np.tanh(mu[:, None, :] + sigma[:, None, :] * eps)

    def log_density(self, states, actions):
        mu, sigma = self.params_at(states)
        a = np.asarray(actions, dtype=float).reshape(mu.shape)
        if np.any(np.abs(a) >= 1.0):
            raise ValidationError("tanh-Gaussian density is only defined for |a| < 1")
        z = np.arctanh(a)
        return (-0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI - np.log1p(-a**2)).sum(axis=1)

    def log_density_grad_action(self, states, actions):
        mu, sigma = self.params_at(states)
        a = np.asarray(actions, dtype=float).reshape(mu.shape)
        z = np.arctanh(a)
        return (-(z - mu) / sigma**2 + 2.0 * a) / (1.0 - a**2)


def make_continuous_behavior(parameterization, **kwargs):
    if parameterization == "mean_noise":
        return MeanNoiseBehavior(**kwargs)
    if parameterization == "distributional":
        return TanhGaussianBehavior(**kwargs)
    raise ValidationError(f"unknown parameterization {parameterization!r}")


def train_ds_behavior(dataset, parameterization, **kwargs):
    """Fit a behavior policy to the (state, action) pairs of a safe dataset."""
    if len(dataset) == 0:
        raise ValidationError("cannot train a behavior policy on an empty dataset")
    batch = dataset.as_batch()
    if parameterization == "tabular":
        est = SoftmaxBehavior(**kwargs)
        return est.fit(batch.states.astype(int), batch.actions)
    if parameterization == "softmax":
        return SoftmaxBehavior(**kwargs).fit(batch.states, batch.actions)
    return make_continuous_behavior(parameterization, **kwargs).fit(batch.states, batch.actions)


def pid_rollouts(controller, episodes, rng, dither=0.05, max_steps=500):
    """Continuous-action PD rollouts with Gaussian dither on the controller output."""
    env = CartPoleEnv("continuous", max_steps=max_steps)
    out = []
    for _ in range(episodes):
        s = env.reset(rng)
        ep = []
        while not env.done:
            a = np.clip(controller(s) + dither * rng.standard_normal(), -1.0, 1.0)
            t = env.step(np.array([a]))
            if is_unsafe(t.next_state):
                break
            ep.append(t)
            s = t.next_state
        out.append(ep)
    return out


def imitate_controller(controller, parameterization, episodes=50, dither=0.05, rng=None, **kwargs):
    """HC-safe network policy trained on dithered controller rollouts."""
    rng = rng if rng is not None else np.random.default_rng(0)
    eps = pid_rollouts(controller, episodes, rng, dither)
    X = np.array([t.state for ep in eps for t in ep])
    y = np.array([t.action for ep in eps for t in ep]).reshape(len(X), -1)
    return make_continuous_behavior(parameterization, **kwargs).fit(X, y)


# ---------------------------------------------------------------- datasets

@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.rewards)

    @property
    def continuation(self):
        return 1.0 - self.terminals


def stack_transitions(transitions):
    return Batch(
        np.array([t.state for t in transitions]),
        np.array([t.action for t in transitions]),
        np.array([t.reward for t in transitions], dtype=float),
        np.array([t.next_state for t in transitions]),
        np.array([float(t.terminal) for t in transitions]),
    )


class SafeDataset:
    """Immutable collection of transitions that never touch an unsafe state.

    File format (one transition per line, whitespace separated)::

        # safeq-dataset 1 env=<name> action=<discrete|continuous> state_dim=<k> action_dim=<m>
        s_1 .. s_k  a_1 .. a_m  reward  s'_1 .. s'_k  terminal

    FrozenLake states are a single cell index; discrete actions are integers;
    ``terminal`` is 0 or 1. Floats use 17 significant digits.
    """

    def __init__(self, transitions, env_name="cartpole", action_kind="continuous"):
        transitions = list(transitions)
        for i, t in enumerate(transitions):
            if is_unsafe(t.state) or is_unsafe(t.next_state):
                raise ValidationError(f"transition {i} touches an unsafe state")
        self._transitions = tuple(transitions)
        self.env_name = env_name
        self.action_kind = action_kind
        self._batch = stack_transitions(self._transitions) if transitions else None

    def __len__(self):
        return len(self._transitions)

    def __iter__(self):
        return iter(self._transitions)

    def __getitem__(self, i):
        return self._transitions[i]

    def as_batch(self):
        return self._batch

    def sample(self, n, rng):
        b = self._batch
        idx = rng.integers(0, len(self), size=n)
        return Batch(b.states[idx], b.actions[idx], b.rewards[idx], b.next_states[idx], b.terminals[idx])

    def save(self, path):
        b = self._batch
        sd = 1 if b.states.ndim == 1 else b.states.shape[1]
        ad = 1 if b.actions.ndim == 1 else b.actions.shape[1]
        lines = [f"# safeq-dataset 1 env={self.env_name} action={self.action_kind} state_dim={sd} action_dim={ad}"]

        def fmt(v, as_int=False):
            v = np.atleast_1d(v)
            return [str(int(x)) for x in v] if as_int else ["%.17g" % x for x in v]

        disc_state = self.env_name == "frozenlake"
        for t in self._transitions:
            cols = fmt(t.state, disc_state) + fmt(t.action, self.action_kind == "discrete")
            cols += ["%.17g" % t.reward] + fmt(t.next_state, disc_state) + [str(int(t.terminal))]
            lines.append(" ".join(cols))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text().splitlines()
        head = lines[0].split()
        if head[:3] != ["#", "safeq-dataset", "1"]:
            raise ValidationError(f"{path} is not a safeq dataset file")
        meta = dict(kv.split("=", 1) for kv in head[3:])
        sd, ad = int(meta["state_dim"]), int(meta["action_dim"])
        disc_state = meta["env"] == "frozenlake"
        disc_action = meta["action"] == "discrete"
        out = []
        for line in lines[1:]:
            if not line.strip():
                continue
            v = line.split()
            s = np.array(v[:sd], dtype=float)
            a = np.array(v[sd:sd + ad], dtype=float)
            r = float(v[sd + ad])
            s2 = np.array(v[sd + ad + 1:2 * sd + ad + 1], dtype=float)
            term = v[2 * sd + ad + 1] == "1"
            if disc_state:
                s, s2 = int(s[0]), int(s2[0])
            a = int(a[0]) if disc_action else a
            out.append(Transition(s, a, r, s2, term))
        return cls(out, meta["env"], meta["action"])


def collect_frozenlake_dataset(n_transitions, rng, behavior=None, epsilon=0.0, max_steps=100):
    behavior = behavior if behavior is not None else hc_frozenlake_policy()
    env = FrozenLakeEnv(max_steps=max_steps)
    out = []
    env.reset()
    while len(out) < n_transitions:
        if env.done:
            env.reset()
        a = collect_action(behavior, env.state, rng, epsilon)
        out.append(env.step(a))
    return SafeDataset(out, "frozenlake", "discrete")


def collect_cartpole_dataset(episodes, rng, action_kind="continuous", controller=None, dither=0.05,
                             discrete_behavior=None, epsilon=0.1):
    controller = controller if controller is not None else PidController()
    if action_kind == "continuous":
        eps = pid_rollouts(controller, episodes, rng, dither)
        return SafeDataset([t for ep in eps for t in ep], "cartpole", "continuous")
    behavior = discrete_behavior if discrete_behavior is not None else PidDiscreteBehavior(controller)
    env = CartPoleEnv("discrete")
    out = []
    for _ in range(episodes):
        env.reset(rng)
        while not env.done:
            t = env.step(collect_action(behavior, env.state, rng, epsilon))
            if is_unsafe(t.next_state):
                break
            out.append(t)
    return SafeDataset(out, "cartpole", "discrete")
