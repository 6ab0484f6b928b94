import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import net_grad_error
from safeq.behavior import Batch, MeanNoiseBehavior, PidDiscreteBehavior, hc_frozenlake_policy, smooth_rows
from safeq.core import Transition, ValidationError, random_mdp, random_positive_rows
from safeq.envs import HOLES, FrozenLakeEnv, fl_successor
from safeq.learners import ContinuousSafeQ, DeepSafeQ, ReplayBuffer, TabularSafeQ
from safeq.oracle import exact_bellman_apply, value_iteration_fixed_point
from safeq.runner import ExperimentConfig, run_seed
from safeq.targets import (
    batch_targets, mc_safe_target_continuous, safe_target_discrete, safe_value, soft_q_target, standard_q_target,
    weighted_logsumexp,
)

LN_HALF_1_E = math.log(0.5 * (1 + math.e))


# ---------------------------------------------------------------- scalar targets

def test_standard_target_examples():
    assert standard_q_target(0.7, [1.0, 2.0], True, 0.9) == 0.7
    assert standard_q_target(0.0, [1.0, 2.0], False, 0.9) == pytest.approx(1.8)


def test_standard_is_small_lambda_limit():
    row = np.array([0.3, 1.2, -0.4])
    safe = safe_target_discrete(0.1, row, np.full(3, 1 / 3), False, 0.9, 1e-3)
    assert abs(safe - standard_q_target(0.1, row, False, 0.9)) <= 1e-3 * 0.9 * math.log(3) + 1e-12


def test_soft_target_examples():
    assert soft_q_target(0.0, [2.0, 2.0], False, 1.0 - 1e-12, 1.0) == pytest.approx(2.0 + math.log(2))
    assert soft_q_target(0.4, [2.0, 2.0], True, 0.9, 1.0) == 0.4


def test_safe_target_examples():
    assert safe_target_discrete(0.3, [5.0, -9.0], [0.5, 0.5], True, 0.9, 1.0) == 0.3
    assert safe_target_discrete(0.3, [2.0, 2.0, 2.0], [0.2, 0.3, 0.5], False, 0.9, 0.7) == pytest.approx(0.3 + 1.8)
    assert safe_target_discrete(0.0, [0.0, 1.0], [0.5, 0.5], False, 1.0 - 1e-15, 1.0) == pytest.approx(0.620115,
                                                                                                     abs=1e-6)


def test_safe_target_rejects_zero_prior():
    with pytest.raises(ValidationError):
        safe_target_discrete(0.0, [0.0, 1.0], [1.0, 0.0], False, 0.9, 1.0)


def test_mc_target_examples():
    assert mc_safe_target_continuous(0.5, [3.0], False, 0.9, 0.7) == pytest.approx(0.5 + 0.9 * 3.0)
    assert mc_safe_target_continuous(0.5, [2.0, 2.0, 2.0], False, 0.9, 0.7) == pytest.approx(0.5 + 1.8)
    assert mc_safe_target_continuous(0.0, [0.0, 1.0], False, 1.0 - 1e-15, 1.0) == pytest.approx(LN_HALF_1_E)
    assert mc_safe_target_continuous(0.2, [9.0, 9.0], True, 0.9, 1.0) == 0.2


def test_small_lambda_does_not_overflow():
    assert np.isfinite(weighted_logsumexp([[1000.0, 999.0]], [[0.5, 0.5]], 1e-3)).all()


# ---------------------------------------------------------------- properties

rows = st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-20, 20), min_size=n, max_size=n),
    st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n),
    st.floats(0.05, 20.0),
))


@settings(max_examples=200, deadline=None)
@given(rows)
def test_bounds_between_min_and_max(case):
    q, w, lam = case
    q, w = np.array(q), np.array(w) / np.sum(w)
    v = safe_value(q, w, lam)[0]
    assert q.min() - 1e-9 <= v <= q.max() + 1e-9


@settings(max_examples=200, deadline=None)
@given(rows, st.floats(-50, 50))
def test_shift_covariance(case, c):
    q, w, lam = case
    q, w = np.array(q), np.array(w) / np.sum(w)
    assert safe_value(q + c, w, lam)[0] == pytest.approx(safe_value(q, w, lam)[0] + c, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(rows, st.integers(0, 4), st.floats(0.0, 5.0))
def test_monotone_in_q(case, idx, bump):
    q, w, lam = case
    q, w = np.array(q), np.array(w) / np.sum(w)
    q2 = q.copy()
    q2[idx % q.size] += bump
    assert safe_target_discrete(0, q2, w, False, 0.9, lam) >= safe_target_discrete(0, q, w, False, 0.9, lam) - 1e-12


def test_lambda_limits(rng):
    for _ in range(100):
        n = int(rng.integers(2, 5))
        q = rng.uniform(-5, 5, n)
        w = random_positive_rows(rng, 1, n)[0]
        assert abs(safe_value(q, w, 1e-3)[0] - q.max()) <= 1e-2
        assert abs(safe_value(q, w, 1e3)[0] - w @ q) <= 1e-2


def test_uniform_prior_reduction(rng):
    for _ in range(200):
        n = int(rng.integers(2, 6))
        q = rng.uniform(-5, 5, n)
        lam, g, r = rng.uniform(0.05, 5), rng.uniform(0, 0.99), rng.normal()
        safe = safe_target_discrete(r, q, np.full(n, 1 / n), False, g, lam)
        assert abs(safe - (soft_q_target(r, q, False, g, lam) - g * lam * math.log(n))) <= 1e-10


def test_batch_targets_match_scalar(rng):
    q = rng.normal(size=(20, 3))
    prior = random_positive_rows(rng, 20, 3)
    r = rng.normal(size=20)
    term = rng.random(20) < 0.3
    y = batch_targets("safe", r, q, 1.0 - term, 0.95, 0.7, prior)
    ref = [safe_target_discrete(r[i], q[i], prior[i], term[i], 0.95, 0.7) for i in range(20)]
    assert np.max(np.abs(y - ref)) <= 1e-12
    with pytest.raises(ValidationError):
        batch_targets("other", r, q, 1 - term, 0.9)


# ---------------------------------------------------------------- replay buffer

@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60))
def test_replay_fifo(capacity, n):
    buf = ReplayBuffer(capacity)
    for i in range(n):
        buf.add(Transition(float(i), 0.0, float(i), float(i + 1), False))
        assert len(buf) <= capacity
    expected = list(range(max(0, n - capacity), n))
    assert list(buf.contents().rewards) == expected if n else len(buf) == 0


def test_replay_sample_and_empty(rng):
    buf = ReplayBuffer(5, (2,), (), int)
    with pytest.raises(ValidationError):
        buf.sample(3, rng)
    buf.add(Transition(np.ones(2), 1, 0.5, np.zeros(2), True))
    b = buf.sample(4, rng)
    assert b.states.shape == (4, 2) and np.all(b.terminals == 1)
    with pytest.raises(ValidationError):
        ReplayBuffer(0)


# ---------------------------------------------------------------- tabular learner

def _fl_learner(**kw):
    return TabularSafeQ(16, 4, behavior=hc_frozenlake_policy(), **kw)


def test_tabular_alpha_zero_unchanged():
    q = _fl_learner(alpha=1e-300)._ensure_init()
    q.q_[...] = 0.25
    q.alpha = 0.0
    q.partial_fit(Transition(14, 2, 1.0, 15, True))
    assert np.all(q.q_ == 0.25)


def test_tabular_single_entry_update():
    q = _fl_learner(alpha=0.5)
    q.partial_fit(Transition(14, 2, 1.0, 15, True))
    assert q.q_[14, 2] == 0.5
    assert np.count_nonzero(q.q_) == 1


def test_tabular_expected_update_is_operator(rng):
    for _ in range(5):
        mdp = random_mdp(rng, 4, 3, 0.9)
        prior = random_positive_rows(rng, 4, 3)

        class Fixed:
            def proba(self, states):
                return prior[states]

        learner = TabularSafeQ(4, 3, behavior=Fixed(), lam=0.8, eta=1e-12, alpha=1.0, gamma=0.9)._ensure_init()
        learner.q_[...] = rng.normal(size=(4, 3))
        learner.prior_ = prior
        expected = exact_bellman_apply(mdp, learner.q_, prior, 0.8)
        learner.expected_update(mdp)
        assert np.max(np.abs(learner.q_ - expected)) <= 1e-12


def test_tabular_sync_updates_reach_fixed_point(rng):
    mdp = random_mdp(rng, 3, 2, 0.8)
    prior = random_positive_rows(rng, 3, 2)
    qstar, _ = value_iteration_fixed_point(mdp, prior, 0.5, 1e-12)

    class Fixed:
        def proba(self, states):
            return prior[states]

    learner = TabularSafeQ(3, 2, behavior=Fixed(), lam=0.5, eta=1e-12, alpha=1.0, gamma=0.8)._ensure_init()
    learner.prior_ = prior
    for _ in range(200):
        learner.expected_update(mdp)
    assert np.max(np.abs(learner.q_ - qstar)) <= 1e-8


def test_tabular_fit_from_dataset_and_predict():
    env = FrozenLakeEnv()
    data = []
    path = [1, 1, 2, 1, 2, 2]  # 0 -> 4 -> 8 -> 9 -> 13 -> 14 -> 15
    env.reset()
    for a in path:
        data.append(env.step(a))
    q = _fl_learner(alpha=0.5, n_updates=3000).fit(data)
    s = 0
    for _ in range(6):
        s = fl_successor(s, int(q.predict(s)[0]))
    assert s == 15
    assert np.allclose(q.predict_proba(np.arange(16)).sum(axis=1), 1.0)


def test_tabular_bad_params():
    with pytest.raises(ValidationError):
        TabularSafeQ(target="other", behavior=hc_frozenlake_policy())._ensure_init()
    with pytest.raises(ValidationError):
        TabularSafeQ(target="safe", behavior=None)._ensure_init()


def test_frozenlake_hole_entries_stay_zero():
    cfg = ExperimentConfig(case=1, env="frozenlake", seeds=[0], episodes=500)
    res = run_seed(cfg, 0)
    q = res.learner.q_
    assert np.all(q[sorted(HOLES)] == 0.0)
    for s in range(16):
        for a in range(4):
            if fl_successor(s, a) in HOLES and s not in HOLES:
                assert q[s, a] == 0.0


# ---------------------------------------------------------------- deep discrete learner

def _batch(rng, n=16, term_frac=0.3):
    return Batch(rng.uniform(-0.1, 0.1, (n, 4)), rng.integers(0, 2, n), rng.normal(size=n),
                 rng.uniform(-0.1, 0.1, (n, 4)), (rng.random(n) < term_frac).astype(float))


def test_deep_targets_match_scalar(rng):
    beh = PidDiscreteBehavior()
    m = DeepSafeQ(behavior=beh, random_state=1).initialize()
    b = _batch(rng)
    y = m.targets(b)
    nq = m.target_net_.predict(b.next_states)
    prior = smooth_rows(beh.proba(b.next_states), m.eta)
    ref = [safe_target_discrete(b.rewards[i], nq[i], prior[i], bool(b.terminals[i]), m.gamma, m.lam)
           for i in range(len(b))]
    assert np.max(np.abs(y - ref)) <= 1e-12


def test_deep_terminal_batch_of_one(rng):
    m = DeepSafeQ(behavior=PidDiscreteBehavior()).initialize()
    b = Batch(np.zeros((1, 4)), np.array([1]), np.array([0.7]), np.zeros((1, 4)), np.array([1.0]))
    assert np.array_equal(m.targets(b), [0.7])


def test_deep_uniform_prior_reduction(rng):
    class Uniform:
        def proba(self, states):
            return np.full((len(np.atleast_2d(states)), 2), 0.5)

    safe = DeepSafeQ(behavior=Uniform(), random_state=3).initialize()
    soft = DeepSafeQ(target="soft", random_state=3).initialize()
    b = _batch(rng, term_frac=0.0)
    diff = soft.targets(b) - safe.targets(b)
    assert np.allclose(diff, safe.gamma * safe.lam * math.log(2), atol=1e-12, rtol=0)


def test_deep_zero_loss_at_own_targets(rng):
    m = DeepSafeQ(behavior=PidDiscreteBehavior()).initialize()
    b = _batch(rng)
    y = m.net_.predict(b.states)[np.arange(len(b)), b.actions]
    loss, grads = m.loss_and_grad(b, y)
    assert loss == 0.0 and all(np.all(g == 0) for g in grads)


def test_deep_loss_decreases_on_frozen_batch(rng):
    m = DeepSafeQ(behavior=PidDiscreteBehavior(), lr=1e-3, sync_period=10**9).initialize()
    b = _batch(rng, 64)
    y = m.targets(b)
    losses = []
    for _ in range(50):
        loss, grads = m.loss_and_grad(b, y)
        losses.append(loss)
        m.optimizer_.step(m.net_.params, grads)
    assert losses[-1] < losses[0]


def test_deep_loss_gradient(rng):
    for k in range(50):
        m = DeepSafeQ(behavior=PidDiscreteBehavior(), hidden=(6,), random_state=k).initialize()
        b = _batch(rng)
        y = m.targets(b)
        assert net_grad_error(m.net_, lambda: m.loss_and_grad(b, y)[0], lambda: m.loss_and_grad(b, y)[1]) <= 1e-4


def test_deep_target_sync_period(rng):
    m = DeepSafeQ(behavior=PidDiscreteBehavior(), sync_period=5).initialize()
    b = _batch(rng)
    for i in range(1, 11):
        m.train_step(b)
        same = np.array_equal(m.net_.get_flat(), m.target_net_.get_flat())
        assert same == (i % 5 == 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_deep_non_finite_loss(rng):
    m = DeepSafeQ(behavior=PidDiscreteBehavior()).initialize()
    b = _batch(rng)
    b.rewards[0] = np.inf
    with pytest.raises(FloatingPointError):
        m.train_step(b)


def test_deep_offline_fit(rng):
    b = _batch(rng, 200)
    m = DeepSafeQ(behavior=PidDiscreteBehavior(), n_steps=20).fit(b)
    assert m.n_steps_ == 20 and np.all(np.isfinite(m.loss_curve_))


# ---------------------------------------------------------------- continuous learner

def _mean_noise():
    return MeanNoiseBehavior(state_scale=None, random_state=0).initialize(4, 1)


def test_mc_target_single_sample_collapse(rng):
    m = ContinuousSafeQ(behavior=_mean_noise(), n_mc=1, random_state=0).initialize()
    b = Batch(rng.normal(size=(8, 4)), rng.uniform(-1, 1, (8, 1)), rng.normal(size=8), rng.normal(size=(8, 4)),
              np.zeros(8))
    g1, g2 = np.random.default_rng(5), np.random.default_rng(5)
    y = m.targets(b, g1)
    q = m.sampled_target_q(b.next_states, g2)[:, 0]
    assert np.allclose(y, b.rewards + m.gamma * q, atol=1e-12, rtol=0)


def test_mc_estimator_consistency(rng):
    # Q varies gently over the smoothed-behavior action spread, as it does for a trained balancer
    for _ in range(20):
        lam = rng.uniform(0.5, 2.0)
        mu, c, b1, b2 = rng.uniform(-0.8, 0.8), rng.uniform(-5, 100), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)

        def q(a):
            return c + b1 * a + b2 * a * a

        ref = mc_safe_target_continuous(0, q(np.clip(mu + 0.1 * rng.standard_normal(65536), -1, 1)), False, 0.9, lam)
        est = mc_safe_target_continuous(0, q(np.clip(mu + 0.1 * rng.standard_normal(1024), -1, 1)), False, 0.9, lam)
        assert abs(est - ref) <= 1e-2


def test_continuous_action_gradient(rng):
    m = ContinuousSafeQ(behavior=_mean_noise(), random_state=0).initialize()
    s = rng.normal(size=(3, 4))
    a = rng.uniform(-1, 1, (3, 1))
    _, dq = m.q_and_action_grad(s, a)
    h = 1e-6
    num = (m.q_values(s, a + h) - m.q_values(s, a - h)) / (2 * h)
    assert np.allclose(dq[:, 0], num, rtol=1e-5, atol=1e-8)


def test_continuous_needs_behavior():
    with pytest.raises(ValidationError):
        ContinuousSafeQ().initialize()


def test_continuous_loss_gradient(rng):
    for k in range(50):
        m = ContinuousSafeQ(behavior=_mean_noise(), hidden=(6,), random_state=k).initialize()
        b = Batch(rng.normal(size=(8, 4)), rng.uniform(-1, 1, (8, 1)), rng.normal(size=8), rng.normal(size=(8, 4)),
                  np.zeros(8))
        y = m.targets(b)
        assert net_grad_error(m.net_, lambda: m.loss_and_grad(b, y)[0], lambda: m.loss_and_grad(b, y)[1]) <= 1e-4
