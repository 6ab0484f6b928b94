"""Safe-support Q-learning estimators: tabular, deep discrete and deep continuous.

Each estimator follows the scikit-learn conventions: hyperparameters are
constructor arguments (so ``get_params``/``set_params``/``clone`` work),
``partial_fit`` consumes data online, ``fit`` trains from a fixed dataset
(the offline variants), and fitted state lives in trailing-underscore
attributes.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .behavior import Batch, smooth_rows, stack_transitions
from .core import Transition, ValidationError
from .neural import DenseNet, make_optimizer
from .targets import batch_targets, check_prior, safe_target_discrete, soft_q_target, standard_q_target

TARGET_KINDS = ("safe", "standard", "soft")


class ReplayBuffer:
    """Bounded FIFO of transitions backed by ring arrays; evicts oldest first."""

    def __init__(self, capacity, state_shape=(), action_shape=(), action_dtype=float, state_dtype=float):
        if capacity < 1:
            raise ValidationError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, *state_shape), dtype=state_dtype)
        self.next_states = np.zeros((self.capacity, *state_shape), dtype=state_dtype)
        self.actions = np.zeros((self.capacity, *action_shape), dtype=action_dtype)
        self.rewards = np.zeros(self.capacity)
        self.terminals = np.zeros(self.capacity)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, t: Transition):
        i = self._next
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = float(t.terminal)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self):
        start = (self._next - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def contents(self):
        """All stored transitions, oldest first, as a :class:`Batch`."""
        idx = self._order()
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminals[idx])

    def sample(self, n, rng):
        if self._size == 0:
            raise ValidationError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._size, size=n)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminals[idx])


def _as_batch(data):
    if isinstance(data, Batch):
        return data
    if isinstance(data, Transition):
        return stack_transitions([data])
    if hasattr(data, "as_batch"):
        return data.as_batch()
    return stack_transitions(list(data))


def _policy_from_q(q, prior, lam, target):
    """Policy induced by Q rows: behavior-weighted softmax, plain softmax, or one-hot greedy."""
    q = np.atleast_2d(q)
    if target == "safe":
        z = q / lam + np.log(prior)
    elif target == "soft":
        z = q / lam
    else:
        p = np.zeros_like(q)
        p[np.arange(len(q)), np.argmax(q, axis=1)] = 1.0
        return p
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


class TabularSafeQ(BaseEstimator):
    """Tabular Q-learning with a safe (KL-to-behavior), standard or soft target.

    ``behavior`` provides ``proba(states)``; its smoothed rows
    ``(1 - eta) * pi_b + eta / |A|`` act as the prior in the safe target.
    Entries never updated keep their initial value of zero.
    """

    def __init__(self, n_states=16, n_actions=4, behavior=None, target="safe", lam=1.0, eta=0.01,
                 alpha=0.5, gamma=0.99, n_updates=20000, random_state=0):
        self.n_states = n_states
        self.n_actions = n_actions
        self.behavior = behavior
        self.target = target
        self.lam = lam
        self.eta = eta
        self.alpha = alpha
        self.gamma = gamma
        self.n_updates = n_updates
        self.random_state = random_state

    def _check_params(self):
        if self.target not in TARGET_KINDS:
            raise ValidationError(f"target must be one of {TARGET_KINDS}")
        if self.target != "standard" and self.lam <= 0:
            raise ValidationError("lambda must be positive")
        if self.target == "safe" and self.behavior is None:
            raise ValidationError("the safe target needs a behavior policy")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError("gamma must lie in [0, 1)")

    def _ensure_init(self):
        if not hasattr(self, "q_"):
            self._check_params()
            self.q_ = np.zeros((self.n_states, self.n_actions))
            self.n_updates_ = 0
            if self.target == "safe":
                self.prior_ = smooth_rows(self.behavior.proba(np.arange(self.n_states)), self.eta)
        return self

    def target_value(self, t: Transition):
        self._ensure_init()
        row = self.q_[int(t.next_state)]
        if self.target == "safe":
            return safe_target_discrete(t.reward, row, self.prior_[int(t.next_state)], t.terminal, self.gamma, self.lam)
        if self.target == "soft":
            return soft_q_target(t.reward, row, t.terminal, self.gamma, self.lam)
        return standard_q_target(t.reward, row, t.terminal, self.gamma)

    def update(self, t: Transition):
        """One ``Q(s,a) <- Q(s,a) + alpha * (y - Q(s,a))`` step."""
        y = self.target_value(t)
        s, a = int(t.state), int(t.action)
        self.q_[s, a] += self.alpha * (y - self.q_[s, a])
        self.n_updates_ += 1
        return self

    def partial_fit(self, transitions):
        self._ensure_init()
        if isinstance(transitions, Transition):
            transitions = [transitions]
        for t in transitions:
            self.update(t)
        return self

    def fit(self, dataset):
        """Offline training: ``n_updates`` uniform draws from ``dataset``."""
        for attr in ("q_", "prior_", "n_updates_"):
            if hasattr(self, attr):
                delattr(self, attr)
        self._ensure_init()
        data = list(dataset)
        rng = np.random.default_rng(self.random_state)
        for i in rng.integers(0, len(data), size=self.n_updates):
            self.update(data[i])
        return self

    def expected_update(self, mdp):
        """Synchronous update of every entry toward its exact expected target under ``mdp``."""
        self._ensure_init()
        new = self.q_.copy()
        cont = mdp.continuation
        for s in range(self.n_states):
            for a in range(self.n_actions):
                y = mdp.reward[s, a]
                for s2 in np.flatnonzero(mdp.transition[s, a]):
                    t = Transition(s, a, 0.0, s2, cont[s2] == 0.0)
                    y += mdp.transition[s, a, s2] * self.target_value(t)
                new[s, a] += self.alpha * (y - self.q_[s, a])
        self.q_ = new
        return self

    def q_values(self, states):
        check_is_fitted(self, "q_")
        return self.q_[np.asarray(states, dtype=int)]

    def predict(self, states):
        """Greedy actions ``argmax_a Q(s, a)`` (lowest index on ties)."""
        return np.argmax(np.atleast_2d(self.q_values(np.atleast_1d(states))), axis=1)

    def predict_proba(self, states):
        states = np.atleast_1d(states)
        prior = self.prior_[states] if self.target == "safe" else None
        return _policy_from_q(self.q_values(states), prior, self.lam, self.target)

    def predict_mode(self, states):
        """Most likely action of the induced policy (``predict_proba``)."""
        return np.argmax(self.predict_proba(states), axis=1)


class _DeepQBase(BaseEstimator):
    def _scaled(self, states):
        s = np.atleast_2d(np.asarray(states, dtype=float))
        return s / self._scale_vec

    def _setup_common(self, in_dim, out_dim):
        rng = np.random.default_rng(self.random_state)
        self.net_ = DenseNet([in_dim, *self.hidden, out_dim], rng=rng)
        self.target_net_ = self.net_.copy()
        self.optimizer_ = make_optimizer(self.optimizer, self.lr)
        self.n_steps_ = 0
        self.rng_ = np.random.default_rng([self.random_state, 1])
        self.loss_curve_ = []

    def sync_target(self):
        self.target_net_.load_from(self.net_)

    def _check_loss(self, loss):
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite Q loss {loss} at step {self.n_steps_}")

    def _after_step(self, loss):
        self.n_steps_ += 1
        self.loss_curve_.append(loss)
        if self.sync_period and self.n_steps_ % self.sync_period == 0:
            self.sync_target()

    def partial_fit(self, batch):
        """One gradient step on the mean-squared Bellman error of ``batch``."""
        self.train_step(_as_batch(batch))
        return self

    def fit(self, dataset, n_steps=None):
        """Offline training: mini-batches drawn from a fixed dataset."""
        n_steps = self.n_steps if n_steps is None else n_steps
        data = _as_batch(dataset)
        self.initialize(data)
        for _ in range(n_steps):
            idx = self.rng_.integers(0, len(data), size=self.batch_size)
            self.train_step(Batch(data.states[idx], data.actions[idx], data.rewards[idx],
                                  data.next_states[idx], data.terminals[idx]))
        return self


class DeepSafeQ(_DeepQBase):
    """DQN over discrete actions with the safe, standard or soft target.

    ``loss = 1/(2|B|) * sum (y - Q_theta(s, a))^2`` with ``y`` computed from the
    target network; the target network copies the online one every
    ``sync_period`` gradient steps.
    """

    def __init__(self, state_dim=4, n_actions=2, behavior=None, target="safe", lam=0.5, eta=0.01,
                 gamma=0.99, lr=1e-3, batch_size=64, sync_period=200, hidden=(64, 64), n_steps=10000,
                 optimizer="adam", state_scale=None, random_state=0):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.behavior = behavior
        self.target = target
        self.lam = lam
        self.eta = eta
        self.gamma = gamma
        self.lr = lr
        self.batch_size = batch_size
        self.sync_period = sync_period
        self.hidden = hidden
        self.n_steps = n_steps
        self.optimizer = optimizer
        self.state_scale = state_scale
        self.random_state = random_state

    def initialize(self, data=None):
        if self.target not in TARGET_KINDS:
            raise ValidationError(f"target must be one of {TARGET_KINDS}")
        if self.target == "safe" and self.behavior is None:
            raise ValidationError("the safe target needs a behavior policy")
        self._scale_vec = np.ones(self.state_dim) if self.state_scale is None else np.asarray(self.state_scale, float)
        self._setup_common(self.state_dim, self.n_actions)
        return self

    def prior(self, states):
        return smooth_rows(self.behavior.proba(states), self.eta)

    def targets(self, batch):
        next_q = self.target_net_.predict(self._scaled(batch.next_states))
        prior = self.prior(batch.next_states) if self.target == "safe" else None
        if prior is not None:
            check_prior(prior)
        return batch_targets(self.target, batch.rewards, next_q, batch.continuation, self.gamma, self.lam, prior)

    def loss_and_grad(self, batch, y=None):
        y = self.targets(batch) if y is None else y
        a = np.asarray(batch.actions, dtype=int).ravel()
        q = self.net_.forward(self._scaled(batch.states))
        idx = np.arange(len(a))
        err = q[idx, a] - y
        n = len(a)
        loss = 0.5 * float(err @ err) / n
        g = np.zeros_like(q)
        g[idx, a] = err / n
        grads, _ = self.net_.backward(g)
        return loss, grads

    def train_step(self, batch):
        if not hasattr(self, "net_"):
            self.initialize()
        loss, grads = self.loss_and_grad(batch)
        self._check_loss(loss)
        self.optimizer_.step(self.net_.params, grads)
        self._after_step(loss)
        return loss

    def q_values(self, states):
        check_is_fitted(self, "net_")
        return self.net_.predict(self._scaled(states))

    def predict(self, states):
        return np.argmax(self.q_values(states), axis=1)

    def predict_proba(self, states):
        prior = self.prior(states) if self.target == "safe" else None
        return _policy_from_q(self.q_values(states), prior, self.lam, self.target)

    def predict_mode(self, states):
        return np.argmax(self.predict_proba(states), axis=1)


class ContinuousSafeQ(_DeepQBase):
    """Q(s, a) network for continuous actions trained on Monte Carlo safe targets.

    For each next state, ``n_mc`` actions are drawn from the smoothed behavior
    (``behavior.sample_smoothed``) and the target is
    ``r + 1(s') * gamma * lam * ln mean_i exp(Q'(s', a_i) / lam)``.
    """

    def __init__(self, state_dim=4, action_dim=1, behavior=None, lam=0.5, gamma=0.99, n_mc=16, lr=1e-3,
                 batch_size=64, sync_period=200, hidden=(64, 64), n_steps=10000, optimizer="adam",
                 state_scale=None, low=-1.0, high=1.0, random_state=0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.behavior = behavior
        self.lam = lam
        self.gamma = gamma
        self.n_mc = n_mc
        self.lr = lr
        self.batch_size = batch_size
        self.sync_period = sync_period
        self.hidden = hidden
        self.n_steps = n_steps
        self.optimizer = optimizer
        self.state_scale = state_scale
        self.low = low
        self.high = high
        self.random_state = random_state

    def initialize(self, data=None):
        if self.behavior is None:
            raise ValidationError("ContinuousSafeQ needs a behavior policy to sample target actions")
        if self.n_mc < 1:
            raise ValidationError("n_mc must be at least 1")
        self._scale_vec = np.ones(self.state_dim) if self.state_scale is None else np.asarray(self.state_scale, float)
        self._setup_common(self.state_dim + self.action_dim, 1)
        return self

    def _inputs(self, states, actions):
        s = self._scaled(states)
        a = np.asarray(actions, dtype=float).reshape(len(s), self.action_dim)
        return np.concatenate([s, a], axis=1)

    def q_values(self, states, actions, net=None):
        check_is_fitted(self, "net_")
        net = self.net_ if net is None else net
        return net.predict(self._inputs(states, actions))[:, 0]

    def sampled_target_q(self, next_states, rng=None):
        """Target-network Q at ``n_mc`` smoothed-behavior actions per next state; shape (B, N)."""
        rng = self.rng_ if rng is None else rng
        s2 = np.atleast_2d(np.asarray(next_states, dtype=float))
        acts = self.behavior.sample_smoothed(s2, self.n_mc, rng)
        rep = np.repeat(s2, self.n_mc, axis=0)
        q = self.q_values(rep, acts.reshape(-1, self.action_dim), net=self.target_net_)
        return q.reshape(len(s2), self.n_mc)

    def targets(self, batch, rng=None):
        q = self.sampled_target_q(batch.next_states, rng)
        return batch_targets("mc_safe", batch.rewards, q, batch.continuation, self.gamma, self.lam)

    def loss_and_grad(self, batch, y=None):
        y = self.targets(batch) if y is None else y
        q = self.net_.forward(self._inputs(batch.states, batch.actions))[:, 0]
        n = len(y)
        err = q - y
        grads, _ = self.net_.backward((err / n)[:, None])
        return 0.5 * float(err @ err) / n, grads

    def train_step(self, batch):
        if not hasattr(self, "net_"):
            self.initialize()
        loss, grads = self.loss_and_grad(batch)
        self._check_loss(loss)
        self.optimizer_.step(self.net_.params, grads)
        self._after_step(loss)
        return loss

    def q_and_action_grad(self, states, actions):
        """Q(s, a) and dQ/da for the online network (used by policy extraction)."""
        x = self._inputs(states, actions)
        q = self.net_.forward(x)
        _, gx = self.net_.backward(np.ones_like(q))
        return q[:, 0], gx[:, self.state_dim:]

    def max_q(self, states, n_grid=101):
        """``max_a Q(s, a)`` over a uniform action grid (1-D actions)."""
        grid = np.linspace(self.low, self.high, n_grid)
        s = np.atleast_2d(np.asarray(states, dtype=float))
        rep = np.repeat(s, n_grid, axis=0)
        acts = np.tile(grid, len(s))[:, None]
        return self.q_values(rep, acts).reshape(len(s), n_grid).max(axis=1)
