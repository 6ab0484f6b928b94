"""Policy extraction from a trained Q-function.

Discrete actions use the closed-form behavior-weighted softmax. Continuous
actions fit a Gaussian surrogate ``N(mu_phi(s), sigma_2^2 I)`` by descending
one of two Monte Carlo objectives, depending on how the behavior policy is
parameterized.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ValidationError
from .neural import DenseNet, make_optimizer
from .targets import check_prior

TANH_MARGIN = 1e-6


def discrete_optimal_policy(q, prior, lam):
    """``pi(a|s) proportional to prior(a|s) * exp(Q(s,a) / lam)``, row-wise and max-stabilized."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    prior = np.atleast_2d(np.asarray(prior, dtype=float))
    check_prior(prior)
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    z = q / lam + np.log(prior)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def _perturbed(mu, noises):
    """Actions ``mu_i + w_j`` for every state i and noise j, shape (p, q, d)."""
    return mu[:, None, :] + noises[None, :, :] if noises.ndim == 2 else mu[:, None, :] + noises


def surrogate_loss_mean_noise(mu, noises, mu_b, q_and_grad, states, sigma_m, lam):
    """Loss and d loss / d mu for the mean-noise prior.

    ``sum_ij ||mu_i + w_j - mu_b_i||^2 / (2 sigma_m^2) - Q(s_i, mu_i + w_j) / lam``

    ``mu`` and ``mu_b`` are (p, d); ``noises`` is (q, d) shared across states or
    (p, q, d). ``q_and_grad(states, actions)`` returns Q and dQ/da for flat inputs.
    """
    acts = _perturbed(mu, noises)
    p, nq, d = acts.shape
    diff = acts - mu_b[:, None, :]
    qv, dq = q_and_grad(np.repeat(states, nq, axis=0), acts.reshape(-1, d))
    qv = qv.reshape(p, nq)
    dq = dq.reshape(p, nq, d)
    s2 = sigma_m**2
    loss = float(0.5 * (diff**2).sum() / s2 - qv.sum() / lam)
    grad_mu = (diff / s2 - dq / lam).sum(axis=1)
    return loss, grad_mu


def surrogate_loss_distributional(mu, noises, behavior, q_and_grad, states, lam, on_clamp=None):
    """Loss and d loss / d mu for a tanh-Gaussian prior.

    ``sum_ij -ln pi_b(mu_i + w_j | s_i) - Q(s_i, mu_i + w_j) / lam``. Actions that
    land on or outside (-1, 1) are pulled in by ``TANH_MARGIN``; such entries
    get zero gradient through the clamp and trigger a warning (or a call to
    ``on_clamp(count)`` when given, so callers can aggregate).
    """
    acts = _perturbed(mu, noises)
    p, nq, d = acts.shape
    lim = 1.0 - TANH_MARGIN
    clamped = np.abs(acts) > lim
    if clamped.any() and on_clamp is not None:
        on_clamp(int(clamped.sum()))
    elif clamped.any():
        warnings.warn(f"{int(clamped.sum())} surrogate actions clamped into the open interval", RuntimeWarning)
    a = np.clip(acts, -lim, lim)
    flat_s = np.repeat(states, nq, axis=0)
    flat_a = a.reshape(-1, d)
    logp = behavior.log_density(flat_s, flat_a).reshape(p, nq)
    dlogp = behavior.log_density_grad_action(flat_s, flat_a).reshape(p, nq, d)
    qv, dq = q_and_grad(flat_s, flat_a)
    qv = qv.reshape(p, nq)
    dq = dq.reshape(p, nq, d)
    loss = float(-logp.sum() - qv.sum() / lam)
    g = np.where(clamped, 0.0, -dlogp - dq / lam)
    return loss, g.sum(axis=1)


class SurrogatePolicy(BaseEstimator):
    """Gaussian surrogate policy fitted to a frozen Q-network.

    ``prior="mean_noise"`` uses the squared-distance objective against the
    behavior mean; ``prior="distributional"`` uses the behavior log-density.
    States come from ``N(0, sigma_1^2 I)`` in normalized coordinates
    (``state_sampling="gaussian"``) or from supplied buffer states
    (``state_sampling="buffer"``). Acting is deterministic with ``mu_phi``.
    """

    def __init__(self, prior="mean_noise", lam=0.5, sigma_1=0.5, sigma_2=0.1, p=64, q=4, n_steps=5000,
                 lr=3e-4, hidden=(64, 64), optimizer="adam", state_scale=None, state_sampling="gaussian",
                 low=-1.0, high=1.0, random_state=0):
        self.prior = prior
        self.lam = lam
        self.sigma_1 = sigma_1
        self.sigma_2 = sigma_2
        self.p = p
        self.q = q
        self.n_steps = n_steps
        self.lr = lr
        self.hidden = hidden
        self.optimizer = optimizer
        self.state_scale = state_scale
        self.state_sampling = state_sampling
        self.low = low
        self.high = high
        self.random_state = random_state

    def _check(self):
        if self.prior not in ("mean_noise", "distributional"):
            raise ValidationError(f"unknown prior {self.prior!r}")
        if self.state_sampling not in ("gaussian", "buffer"):
            raise ValidationError(f"unknown state sampling {self.state_sampling!r}")
        for name in ("lam", "sigma_1", "sigma_2"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.p < 1 or self.q < 1:
            raise ValidationError("p and q must be at least 1")

    def initialize(self, state_dim, action_dim=1):
        self._check()
        self._scale_vec = np.ones(state_dim) if self.state_scale is None else np.asarray(self.state_scale, float)
        self.net_ = DenseNet([state_dim, *self.hidden, action_dim], rng=np.random.default_rng(self.random_state))
        self.optimizer_ = make_optimizer(self.optimizer, self.lr)
        self.rng_ = np.random.default_rng([self.random_state, 5])
        self.loss_curve_ = []
        self.action_dim_ = action_dim
        self.n_clamped_ = 0
        return self

    def _count_clamp(self, n):
        self.n_clamped_ += n

    def sample_states(self, buffer_states=None):
        if self.state_sampling == "buffer":
            if buffer_states is None or len(buffer_states) == 0:
                raise ValidationError("buffer state sampling needs buffer_states")
            idx = self.rng_.integers(0, len(buffer_states), size=self.p)
            return np.asarray(buffer_states, dtype=float)[idx]
        z = self.sigma_1 * self.rng_.standard_normal((self.p, len(self._scale_vec)))
        return z * self._scale_vec

    def loss_and_grad(self, states, noises, q_model, behavior):
        """Surrogate loss and gradients with respect to the policy-net parameters."""
        mu = self.net_.forward(states / self._scale_vec)
        if self.prior == "mean_noise":
            loss, g = surrogate_loss_mean_noise(mu, noises, behavior.mean(states), q_model.q_and_action_grad,
                                                states, behavior.sigma_m, self.lam)
        else:
            loss, g = surrogate_loss_distributional(mu, noises, behavior, q_model.q_and_action_grad, states, self.lam,
                                                    on_clamp=self._count_clamp)
        grads, _ = self.net_.backward(g)
        return loss, grads

    def fit(self, q_model, behavior, buffer_states=None, state_dim=None):
        """Run ``n_steps`` descent steps with ``q_model`` held fixed."""
        dim = state_dim if state_dim is not None else q_model.state_dim
        adim = getattr(q_model, "action_dim", 1)
        self.initialize(dim, adim)
        for _ in range(self.n_steps):
            states = self.sample_states(buffer_states)
            noises = self.sigma_2 * self.rng_.standard_normal((self.q, adim))
            loss, grads = self.loss_and_grad(states, noises, q_model, behavior)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite surrogate loss at step {len(self.loss_curve_)}")
            self.optimizer_.step(self.net_.params, grads)
            self.loss_curve_.append(loss / (self.p * self.q))
        if self.n_clamped_:
            total = self.n_steps * self.p * self.q
            warnings.warn(f"{self.n_clamped_} of {total} surrogate actions were clamped into the open interval",
                          RuntimeWarning)
        return self

    def mean(self, states):
        check_is_fitted(self, "net_")
        s = np.atleast_2d(np.asarray(states, dtype=float))
        return self.net_.predict(s / self._scale_vec)

    def predict(self, states):
        """Deterministic action ``mu_phi(s)`` clipped to the action bounds."""
        lo, hi = self.low, self.high
        if self.prior == "distributional":
            lo, hi = lo + TANH_MARGIN, hi - TANH_MARGIN
        return np.clip(self.mean(states), lo, hi)

    def sample(self, states, rng):
        mu = self.mean(states)
        return np.clip(mu + self.sigma_2 * rng.standard_normal(mu.shape), self.low, self.high)
