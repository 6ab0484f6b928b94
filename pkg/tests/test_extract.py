import math
import warnings

import numpy as np
import pytest

from gradcheck import net_grad_error
from safeq.behavior import MeanNoiseBehavior, TanhGaussianBehavior
from safeq.core import ValidationError, random_positive_rows
from safeq.extract import (
    SurrogatePolicy, discrete_optimal_policy, surrogate_loss_distributional, surrogate_loss_mean_noise,
)
from safeq.learners import ContinuousSafeQ
from safeq.oracle import kl_objective


def test_constant_q_returns_prior(rng):
    prior = random_positive_rows(rng, 5, 3)
    assert np.allclose(discrete_optimal_policy(np.full((5, 3), 2.5), prior, 0.7), prior, atol=1e-12)


def test_two_action_example():
    p = discrete_optimal_policy([[0.0, 1.0]], [[0.5, 0.5]], 1.0)[0]
    assert np.allclose(p, [1 / (1 + math.e), math.e / (1 + math.e)], atol=1e-12)
    assert p[0] == pytest.approx(0.26894, abs=1e-5)


def test_rows_normalized(rng):
    p = discrete_optimal_policy(rng.normal(size=(50, 4)) * 30, random_positive_rows(rng, 50, 4), 0.05)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)


def test_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        discrete_optimal_policy([[0.0, 1.0]], [[1.0, 0.0]], 1.0)
    with pytest.raises(ValidationError):
        discrete_optimal_policy([[0.0, 1.0]], [[0.5, 0.5]], 0.0)


def test_argmax_invariant_under_row_shift(rng):
    q = rng.normal(size=(20, 4))
    prior = random_positive_rows(rng, 20, 4)
    shift = rng.normal(size=(20, 1)) * 10
    a = discrete_optimal_policy(q, prior, 0.5).argmax(axis=1)
    b = discrete_optimal_policy(q + shift, prior, 0.5).argmax(axis=1)
    assert np.array_equal(a, b)


def test_lambda_moves_toward_prior(rng):
    q = rng.normal(size=(10, 3)) * 3
    prior = random_positive_rows(rng, 10, 3)
    tv = [0.5 * np.abs(discrete_optimal_policy(q, prior, lam) - prior).sum(axis=1).max() for lam in (0.5, 1.0, 2.0)]
    assert all(np.isfinite(tv)) and tv[0] > tv[1] > tv[2]


def test_maximizes_inner_objective(rng):
    for _ in range(20):
        n = int(rng.integers(2, 5))
        q, prior, lam = rng.uniform(-5, 5, n), random_positive_rows(rng, 1, n)[0], rng.uniform(0.05, 5)
        best = kl_objective(discrete_optimal_policy(q, prior, lam)[0], q, prior, lam)
        for pi in rng.dirichlet(np.ones(n), 1000):
            assert kl_objective(pi, q, prior, lam) <= best + 1e-12


# ---------------------------------------------------------------- continuous surrogate losses

def _linear_q(slope):
    return lambda s, a: (slope * a[:, 0], np.full_like(a, slope))


def test_mean_noise_zero_case():
    mu = np.array([[0.3], [-0.2]])
    loss, g = surrogate_loss_mean_noise(mu, np.zeros((1, 1)), mu.copy(), _linear_q(0.0), np.zeros((2, 4)), 0.1, 1.0)
    assert loss == 0.0 and np.all(g == 0)


def test_mean_noise_scalar_example():
    loss, _ = surrogate_loss_mean_noise(np.array([[1.0]]), np.array([[0.5]]), np.array([[0.0]]), _linear_q(1.0),
                                        np.zeros((1, 4)), 1.0, 1.0)
    assert loss == pytest.approx(-0.375)


def test_distributional_q_zero_is_negative_loglik(rng):
    beh = TanhGaussianBehavior(state_scale=None, random_state=0).initialize(4, 1)
    s = rng.normal(size=(3, 4))
    mu = rng.uniform(-0.5, 0.5, (3, 1))
    w = rng.normal(scale=0.1, size=(2, 1))
    loss, _ = surrogate_loss_distributional(mu, w, beh, _linear_q(0.0), s, 1.0)
    acts = (mu[:, None, :] + w[None]).reshape(-1, 1)
    assert loss == pytest.approx(-beh.log_density(np.repeat(s, 2, axis=0), acts).sum())


def test_distributional_lambda_halves_q_term(rng):
    beh = TanhGaussianBehavior(state_scale=None, random_state=0).initialize(4, 1)
    s, mu, w = rng.normal(size=(3, 4)), rng.uniform(-0.5, 0.5, (3, 1)), rng.normal(scale=0.1, size=(2, 1))
    q = lambda s_, a: (2.0 + a[:, 0], np.ones_like(a))  # noqa: E731
    l1, _ = surrogate_loss_distributional(mu, w, beh, q, s, 1.0)
    l2, _ = surrogate_loss_distributional(mu, w, beh, q, s, 2.0)
    l0, _ = surrogate_loss_distributional(mu, w, beh, _linear_q(0.0), s, 1.0)
    q_term = l1 - l0
    assert l1 - l2 == pytest.approx(q_term / 2)


def test_distributional_clamps_with_warning():
    beh = TanhGaussianBehavior(state_scale=None, random_state=0).initialize(4, 1)
    with pytest.warns(RuntimeWarning, match="clamped"):
        loss, g = surrogate_loss_distributional(np.array([[1.2]]), np.zeros((1, 1)), beh, _linear_q(1.0),
                                                np.zeros((1, 4)), 1.0)
    assert np.isfinite(loss) and g[0, 0] == 0.0


def _setup(prior, k, rng):
    beh = (MeanNoiseBehavior if prior == "mean_noise" else TanhGaussianBehavior)(
        state_scale=None, hidden=(6,), random_state=k).initialize(4, 1)
    qm = ContinuousSafeQ(behavior=beh, hidden=(6,), random_state=k + 100).initialize()
    pol = SurrogatePolicy(prior=prior, hidden=(6,), p=5, q=3, random_state=k).initialize(4, 1)
    states = rng.normal(scale=0.2, size=(5, 4))
    noises = rng.normal(scale=0.1, size=(3, 1))
    return beh, qm, pol, states, noises


@pytest.mark.parametrize("prior", ["mean_noise", "distributional"])
def test_surrogate_gradients(prior, rng):
    for k in range(50):
        beh, qm, pol, states, noises = _setup(prior, k, rng)
        pol.net_.weights[-1] *= 0.3  # keep perturbed actions inside (-1, 1)
        err = net_grad_error(pol.net_, lambda: pol.loss_and_grad(states, noises, qm, beh)[0],
                             lambda: pol.loss_and_grad(states, noises, qm, beh)[1])
        assert err <= 1e-4, (prior, k, err)


def test_zero_steps_returns_initial_policy(rng):
    beh, qm, _, _, _ = _setup("mean_noise", 0, rng)
    a = SurrogatePolicy(n_steps=0, random_state=4).fit(qm, beh)
    b = SurrogatePolicy(random_state=4).initialize(4, 1)
    assert np.array_equal(a.net_.get_flat(), b.net_.get_flat())


def test_q_zero_full_batch_recovers_behavior_mean(rng):
    beh = MeanNoiseBehavior(state_scale=None, random_state=1).initialize(4, 1)

    class ZeroQ:
        state_dim, action_dim = 4, 1

        @staticmethod
        def q_and_action_grad(s, a):
            return np.zeros(len(a)), np.zeros_like(a)

    pol = SurrogatePolicy(p=32, q=1, optimizer="sgd", lr=1e-4, random_state=0).initialize(4, 1)
    states = rng.normal(scale=0.5, size=(32, 4))
    dist = []
    for _ in range(200):
        dist.append(float(np.abs(pol.mean(states) - beh.mean(states)).mean()))
        _, grads = pol.loss_and_grad(states, np.zeros((1, 1)), ZeroQ, beh)
        pol.optimizer_.step(pol.net_.params, grads)
    assert np.all(np.diff(dist) < 0)


def test_state_sampling_modes(rng):
    pol = SurrogatePolicy(state_sampling="buffer", p=7, state_scale=[1, 2, 3, 4]).initialize(4, 1)
    with pytest.raises(ValidationError):
        pol.sample_states(None)
    buf = rng.normal(size=(20, 4))
    s = pol.sample_states(buf)
    assert s.shape == (7, 4) and all(any(np.array_equal(r, b) for b in buf) for r in s)
    g = SurrogatePolicy(p=4000, sigma_1=0.5, state_scale=[1, 2, 3, 4]).initialize(4, 1).sample_states()
    assert np.allclose(g.std(axis=0), 0.5 * np.array([1, 2, 3, 4]), rtol=0.1)


def test_bad_prior():
    with pytest.raises(ValidationError):
        SurrogatePolicy(prior="other").initialize(4, 1)
