"""Experiment configuration and the per-case training loops.

Cases (action space, behavior source):

====  ==========  ===================================
case  actions     behavior policy
====  ==========  ===================================
1     discrete    hand-crafted safe + epsilon-greedy
2     discrete    dataset-trained safe (offline)
3     continuous  hand-crafted safe, mean-noise
4     continuous  hand-crafted safe, distributional
5     continuous  dataset-trained, mean-noise (offline)
6     continuous  dataset-trained, distributional (offline)
====  ==========  ===================================

Online cases (1, 3, 4) collect data with the behavior policy; offline cases
(2, 5, 6) build a safe dataset first and never step the training
environment afterwards.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .behavior import (
    PidController, PidDiscreteBehavior, SafeDataset, SoftmaxBehavior, collect_action,
    collect_cartpole_dataset, collect_frozenlake_dataset, hc_frozenlake_policy, imitate_controller,
    train_ds_behavior,
)
from .core import (
    STREAM_AGENT, STREAM_BEHAVIOR, STREAM_DATASET, STREAM_ENV, STREAM_EVAL, STREAM_EXTRACT,
    ValidationError, discounted_return, make_rng,
)
from .envs import CARTPOLE_STATE_SCALE, CartPoleEnv, FrozenLakeEnv, is_unsafe
from .extract import SurrogatePolicy
from .learners import ContinuousSafeQ, DeepSafeQ, ReplayBuffer, TabularSafeQ
from .metrics import risk_severity
from .neural import save_checkpoint

CONTINUOUS_CASES = {3: ("online", "mean_noise"), 4: ("online", "distributional"),
                    5: ("offline", "mean_noise"), 6: ("offline", "distributional")}

RECORD_FIELDS = ("seed", "episode", "return", "success", "max_angle_deg", "risk_severity_deg",
                 "unsafe_episode", "unsafe_visits", "max_q_s0", "mc_return")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Flat experiment settings; ``None`` means "use the environment default"."""

    case: int = 1
    env: str = "frozenlake"
    method: str = "safe"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    lam: float | None = None
    eta: float = 0.01
    alpha: float = 0.5
    gamma: float = 0.99
    epsilon: float = 0.1
    collection_mode: str = "behavior"
    greedy: str | None = None
    episodes: int = 3000
    train_steps: int = 60000
    dataset_size: int = 5000
    dataset_episodes: int = 200
    dither: float = 0.05
    lr: float = 1e-3
    batch_size: int = 64
    sync_period: int = 200
    buffer_capacity: int = 50000
    horizon: int = 500
    mc_samples: int = 16
    hidden: list = field(default_factory=lambda: [64, 64])
    behavior_steps: int = 3000
    imitation_episodes: int = 50
    sigma_m: float = 0.1
    smoothing_sigma: float | None = None
    sigma_floor: float = 0.02
    sigma_1: float = 0.5
    sigma_2: float = 0.1
    extract_p: int = 64
    extract_q: int = 4
    extract_steps: int = 5000
    lr_pi: float = 3e-4
    state_sampling: str = "gaussian"
    eval_every: int = 1
    eval_every_steps: int = 1000
    eval_episodes: int = 20
    checkpoint_every: int = 100
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def discrete(self):
        return self.case in (1, 2)

    @property
    def offline(self):
        return self.case in (2, 5, 6)

    @property
    def resolved_lam(self):
        if self.lam is not None:
            return float(self.lam)
        return 1.0 if self.env == "frozenlake" else 0.5

    @property
    def resolved_greedy(self):
        if self.greedy is not None:
            return self.greedy
        return "argmax" if self.env == "frozenlake" or self.method == "standard" else "mode"

    def validate(self):
        if self.case not in range(1, 7):
            raise ConfigError("case must be 1..6")
        if self.env not in ("frozenlake", "cartpole"):
            raise ConfigError(f"unknown environment {self.env!r}")
        if self.env == "frozenlake" and not self.discrete:
            raise ConfigError(f"case {self.case} needs continuous actions; FrozenLake only supports cases 1 and 2")
        if self.method not in ("safe", "standard", "soft"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.discrete and self.method != "safe":
            raise ConfigError("continuous cases only support the safe method")
        if self.greedy not in (None, "argmax", "mode"):
            raise ConfigError("greedy must be 'argmax' or 'mode'")
        if self.collection_mode not in ("behavior", "q_greedy"):
            raise ConfigError("collection_mode must be 'behavior' or 'q_greedy'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.resolved_lam <= 0 or not 0 < self.eta < 1 or not 0 <= self.gamma < 1 or self.alpha <= 0:
            raise ConfigError("need lam > 0, 0 < eta < 1, 0 <= gamma < 1 and alpha > 0")
        if min(self.batch_size, self.sync_period, self.buffer_capacity, self.mc_samples, self.eval_episodes,
               self.eval_every, self.eval_every_steps, self.checkpoint_every) < 1:
            raise ConfigError("sizes, periods and counts must be positive")
        return self


@dataclass
class RunResult:
    seed: int
    records: list
    final_records: list
    learner: object = None
    behavior: object = None
    policy: object = None
    dataset: object = None
    training_env_steps: int = 0
    unsafe_visits: int = 0
    checkpoints: list = field(default_factory=list)
    calibration: list = field(default_factory=list)


def _seed_int(seed, stream):
    return int(make_rng(seed, stream).integers(0, 2**31 - 1))


# ---------------------------------------------------------------- rollouts

def rollout(env, act, rng=None, max_q=None, gamma=0.99, state=None):
    """Run one episode and return its record fields (without seed/episode/unsafe_visits)."""
    s = env.reset(rng, state=state) if isinstance(env, CartPoleEnv) else env.reset()
    q0 = max_q(s) if max_q is not None else math.nan
    rewards = []
    angles = [abs(s[2])] if isinstance(env, CartPoleEnv) else []
    hit_unsafe = False
    while not env.done:
        t = env.step(act(s))
        rewards.append(t.reward)
        s = t.next_state
        hit_unsafe |= is_unsafe(s)
        if angles:
            angles.append(abs(s[2]))
    if isinstance(env, CartPoleEnv):
        deg = np.degrees(angles)
        max_angle, risk, success = float(deg.max()), risk_severity(deg), float(len(rewards) == env.max_steps)
    else:
        max_angle, risk, success = math.nan, math.nan, float(s == 15)
    return {"return": float(sum(rewards)), "success": success, "max_angle_deg": max_angle,
            "risk_severity_deg": risk, "unsafe_episode": float(hit_unsafe), "max_q_s0": float(q0),
            "mc_return": discounted_return(rewards, gamma)}


def _discrete_actor(learner, greedy):
    if greedy == "mode":
        return lambda s: int(learner.predict_mode(np.atleast_1d(s) if np.ndim(s) == 0 else s)[0])
    return lambda s: int(learner.predict(np.atleast_1d(s) if np.ndim(s) == 0 else s)[0])


def _discrete_max_q(learner):
    return lambda s: float(np.max(learner.q_values(np.atleast_1d(s) if np.ndim(s) == 0 else s)))


def evaluate(env, act, episodes, rng, max_q=None, gamma=0.99):
    return [rollout(env, act, rng, max_q, gamma) for _ in range(episodes)]


def calibration_points(models, env, gamma, episodes, rng):
    """``(max_a Q(s0, a), discounted MC return)`` pairs at fresh initial states.

    ``models`` is a list of ``(max_q, act)`` callables, one per checkpoint.
    Each model gets ``episodes`` fresh starts drawn from ``rng``.
    """
    out = []
    for max_q, act in models:
        pts = []
        for _ in range(episodes):
            r = rollout(env, act, rng, max_q, gamma)
            pts.append((r["max_q_s0"], r["mc_return"]))
        out.append(pts)
    return out


# ---------------------------------------------------------------- case loops

class _Run:
    def __init__(self, cfg: ExperimentConfig, seed: int, out_dir=None):
        self.cfg = cfg
        self.seed = int(seed)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.records = []
        self.unsafe_visits = 0
        self.train_env = None
        self.checkpoints = []
        self.eval_rng = make_rng(seed, STREAM_EVAL)

    def training_env_steps(self):
        return 0 if self.train_env is None else self.train_env.total_steps

    def record(self, episode, fields):
        row = {"seed": self.seed, "episode": int(episode), **fields, "unsafe_visits": self.unsafe_visits}
        self.records.append({k: row[k] for k in RECORD_FIELDS})

    def checkpoint(self, tag, meta, tensors):
        if self.out_dir is None:
            return
        path = self.out_dir / f"ckpt_seed{self.seed}_{tag}.txt"
        save_checkpoint(path, {"config": self.cfg.to_dict(), "seed": self.seed, **meta}, tensors)
        self.checkpoints.append(path)


class _CountingEnv:
    """Wraps an environment and counts ``step`` calls."""

    def __init__(self, env):
        self.env = env
        self.total_steps = 0

    def __getattr__(self, name):
        return getattr(self.env, name)

    def step(self, action):
        self.total_steps += 1
        return self.env.step(action)


def _fl_behavior(cfg, seed, run):
    if cfg.case == 1:
        return hc_frozenlake_policy(), None
    rng = make_rng(seed, STREAM_DATASET)
    data = collect_frozenlake_dataset(cfg.dataset_size, rng, epsilon=cfg.epsilon)
    beh = train_ds_behavior(data, "tabular", n_actions=4, n_states=16, n_steps=cfg.behavior_steps,
                            lr=0.05, random_state=_seed_int(seed, STREAM_BEHAVIOR))
    return beh, data


def _run_frozenlake(cfg, seed, out_dir):
    run = _Run(cfg, seed, out_dir)
    behavior, data = _fl_behavior(cfg, seed, run)
    learner = TabularSafeQ(16, 4, behavior=behavior, target=cfg.method, lam=cfg.resolved_lam, eta=cfg.eta,
                           alpha=cfg.alpha, gamma=cfg.gamma, n_updates=cfg.train_steps,
                           random_state=_seed_int(seed, STREAM_AGENT))
    learner._ensure_init()
    eval_env = FrozenLakeEnv()
    act = _discrete_actor(learner, cfg.resolved_greedy)
    max_q = _discrete_max_q(learner)

    def snapshot(ep):
        run.record(ep, rollout(eval_env, act, max_q=max_q, gamma=cfg.gamma))
        if ep % cfg.checkpoint_every == 0:
            run.checkpoint(f"ep{ep}", {"kind": "tabular"}, {"q": learner.q_})

    if cfg.offline:
        items = list(data)
        rng = make_rng(seed, STREAM_AGENT)
        n_rounds = max(1, cfg.train_steps // cfg.eval_every_steps)
        for k in range(1, n_rounds + 1):
            for i in rng.integers(0, len(items), size=cfg.eval_every_steps):
                learner.update(items[i])
            snapshot(k)
    else:
        run.train_env = _CountingEnv(FrozenLakeEnv())
        env = run.train_env
        brng = make_rng(seed, STREAM_BEHAVIOR)
        for ep in range(1, cfg.episodes + 1):
            s = env.reset()
            while not env.done:
                a = collect_action(behavior, s, brng, cfg.epsilon, learner.q_[s], cfg.collection_mode)
                t = env.step(a)
                run.unsafe_visits += int(is_unsafe(t.next_state))
                learner.update(t)
                s = t.next_state
            if ep % cfg.eval_every == 0:
                snapshot(ep)
    final = [dict(seed=seed, episode=0, **rollout(eval_env, act, max_q=max_q, gamma=cfg.gamma),
                  unsafe_visits=run.unsafe_visits)]
    tensors = {"q": learner.q_}
    if cfg.method == "safe":
        tensors["prior"] = learner.prior_
    run.checkpoint("final", {"kind": "tabular", "greedy": cfg.resolved_greedy}, tensors)
    return RunResult(seed, run.records, [{k: r[k] for k in RECORD_FIELDS} for r in final], learner, behavior,
                     None, data, run.training_env_steps(), run.unsafe_visits, run.checkpoints)


def _cp_discrete_behavior(cfg, seed):
    if cfg.case == 1:
        return PidDiscreteBehavior(PidController()), None
    rng = make_rng(seed, STREAM_DATASET)
    data = collect_cartpole_dataset(cfg.dataset_episodes, rng, "discrete", dither=cfg.dither, epsilon=cfg.epsilon)
    beh = train_ds_behavior(data, "softmax", n_actions=2, hidden=tuple(cfg.hidden), n_steps=cfg.behavior_steps,
                            state_scale=tuple(CARTPOLE_STATE_SCALE), random_state=_seed_int(seed, STREAM_BEHAVIOR))
    return beh, data


def _q_tensors(learner):
    return {**learner.net_.tensors("q"), **learner.target_net_.tensors("qt")}


def _run_cartpole_discrete(cfg, seed, out_dir):
    run = _Run(cfg, seed, out_dir)
    behavior, data = _cp_discrete_behavior(cfg, seed)
    learner = DeepSafeQ(4, 2, behavior=behavior, target=cfg.method, lam=cfg.resolved_lam, eta=cfg.eta,
                        gamma=cfg.gamma, lr=cfg.lr, batch_size=cfg.batch_size, sync_period=cfg.sync_period,
                        hidden=tuple(cfg.hidden), n_steps=cfg.train_steps, state_scale=CARTPOLE_STATE_SCALE,
                        random_state=_seed_int(seed, STREAM_AGENT)).initialize()
    eval_env = CartPoleEnv("discrete", max_steps=cfg.horizon)
    act = _discrete_actor(learner, cfg.resolved_greedy)
    max_q = _discrete_max_q(learner)
    meta = {"kind": "dqn", "greedy": cfg.resolved_greedy, "spec": learner.net_.spec()}

    def snapshot(ep):
        run.record(ep, rollout(eval_env, act, run.eval_rng, max_q, cfg.gamma))
        if ep % cfg.checkpoint_every == 0:
            run.checkpoint(f"ep{ep}", meta, _q_tensors(learner))

    if cfg.offline:
        batch = data.as_batch()
        rng = learner.rng_
        n_rounds = max(1, cfg.train_steps // cfg.eval_every_steps)
        for k in range(1, n_rounds + 1):
            for _ in range(cfg.eval_every_steps):
                idx = rng.integers(0, len(batch), size=cfg.batch_size)
                learner.train_step(type(batch)(batch.states[idx], batch.actions[idx], batch.rewards[idx],
                                               batch.next_states[idx], batch.terminals[idx]))
            snapshot(k)
    else:
        run.train_env = _CountingEnv(CartPoleEnv("discrete", max_steps=cfg.horizon))
        env = run.train_env
        buf = ReplayBuffer(cfg.buffer_capacity, (4,), (), int)
        erng, brng, arng = make_rng(seed, STREAM_ENV), make_rng(seed, STREAM_BEHAVIOR), learner.rng_
        ep = 0
        while learner.n_steps_ < cfg.train_steps:
            ep += 1
            s = env.reset(erng)
            while not env.done and learner.n_steps_ < cfg.train_steps:
                q_row = learner.q_values(s)[0] if cfg.collection_mode == "q_greedy" else None
                t = env.step(collect_action(behavior, s, brng, cfg.epsilon, q_row, cfg.collection_mode))
                run.unsafe_visits += int(is_unsafe(t.next_state))
                buf.add(t)
                s = t.next_state
                if len(buf) >= cfg.batch_size:
                    learner.train_step(buf.sample(cfg.batch_size, arng))
            if ep % cfg.eval_every == 0:
                snapshot(ep)
    final = evaluate(eval_env, act, cfg.eval_episodes, make_rng(seed, STREAM_EVAL + 100), max_q, cfg.gamma)
    final = [{"seed": seed, "episode": i, **r, "unsafe_visits": run.unsafe_visits} for i, r in enumerate(final)]
    tensors = _q_tensors(learner)
    if isinstance(behavior, SoftmaxBehavior):
        tensors.update(behavior.net_.tensors("b"))
        meta["behavior_spec"] = behavior.net_.spec()
    run.checkpoint("final", meta, tensors)
    return RunResult(seed, run.records, [{k: r[k] for k in RECORD_FIELDS} for r in final], learner, behavior,
                     None, data, run.training_env_steps(), run.unsafe_visits, run.checkpoints)


def _cp_continuous_behavior(cfg, seed, param):
    rng = make_rng(seed, STREAM_DATASET)
    kw = dict(hidden=tuple(cfg.hidden), n_steps=cfg.behavior_steps, random_state=_seed_int(seed, STREAM_BEHAVIOR))
    if param == "mean_noise":
        kw.update(sigma_m=cfg.sigma_m, smoothing_sigma=cfg.smoothing_sigma)
    else:
        kw.update(sigma_floor=cfg.sigma_floor)
    if not cfg.offline:
        return imitate_controller(PidController(), param, cfg.imitation_episodes, cfg.dither, rng, **kw), None
    data = collect_cartpole_dataset(cfg.dataset_episodes, rng, "continuous", dither=cfg.dither)
    return train_ds_behavior(data, param, **kw), data


def _run_cartpole_continuous(cfg, seed, out_dir):
    run = _Run(cfg, seed, out_dir)
    _, param = CONTINUOUS_CASES[cfg.case]
    behavior, data = _cp_continuous_behavior(cfg, seed, param)
    learner = ContinuousSafeQ(4, 1, behavior=behavior, lam=cfg.resolved_lam, gamma=cfg.gamma, n_mc=cfg.mc_samples,
                              lr=cfg.lr, batch_size=cfg.batch_size, sync_period=cfg.sync_period,
                              hidden=tuple(cfg.hidden), n_steps=cfg.train_steps, state_scale=CARTPOLE_STATE_SCALE,
                              random_state=_seed_int(seed, STREAM_AGENT)).initialize()
    max_q = lambda s: float(learner.max_q(s)[0])  # noqa: E731
    beh_act = lambda s: behavior.predict(s)[0]  # noqa: E731
    eval_env = CartPoleEnv("continuous", max_steps=cfg.horizon)
    meta = {"kind": "continuous_q", "spec": learner.net_.spec()}

    def snapshot(ep, fields=None):
        # until a policy is extracted, the tracked policy is the behavior mean
        run.record(ep, fields if fields is not None else rollout(eval_env, beh_act, run.eval_rng, max_q, cfg.gamma))
        if ep % cfg.checkpoint_every == 0:
            run.checkpoint(f"ep{ep}", meta, _q_tensors(learner))

    if cfg.offline:
        batch = data.as_batch()
        rng = learner.rng_
        n_rounds = max(1, cfg.train_steps // cfg.eval_every_steps)
        for k in range(1, n_rounds + 1):
            for _ in range(cfg.eval_every_steps):
                idx = rng.integers(0, len(batch), size=cfg.batch_size)
                learner.train_step(type(batch)(batch.states[idx], batch.actions[idx], batch.rewards[idx],
                                               batch.next_states[idx], batch.terminals[idx]))
            snapshot(k)
    else:
        run.train_env = _CountingEnv(CartPoleEnv("continuous", max_steps=cfg.horizon))
        env = run.train_env
        buf = ReplayBuffer(cfg.buffer_capacity, (4,), (1,), float)
        erng, brng, arng = make_rng(seed, STREAM_ENV), make_rng(seed, STREAM_BEHAVIOR), learner.rng_
        ep = 0
        while learner.n_steps_ < cfg.train_steps:
            ep += 1
            s = env.reset(erng)
            while not env.done and learner.n_steps_ < cfg.train_steps:
                t = env.step(behavior.sample(s, brng)[0])
                run.unsafe_visits += int(is_unsafe(t.next_state))
                buf.add(t)
                s = t.next_state
                if len(buf) >= cfg.batch_size:
                    learner.train_step(buf.sample(cfg.batch_size, arng))
            if ep % cfg.eval_every == 0:
                snapshot(ep)

    policy = SurrogatePolicy(prior=param, lam=cfg.resolved_lam, sigma_1=cfg.sigma_1, sigma_2=cfg.sigma_2,
                             p=cfg.extract_p, q=cfg.extract_q, n_steps=cfg.extract_steps, lr=cfg.lr_pi,
                             hidden=tuple(cfg.hidden), state_scale=CARTPOLE_STATE_SCALE,
                             state_sampling=cfg.state_sampling, random_state=_seed_int(seed, STREAM_EXTRACT))
    buffer_states = data.as_batch().states if data is not None else (buf.contents().states if not cfg.offline else None)
    policy.fit(learner, behavior, buffer_states=buffer_states)
    act = lambda s: policy.predict(s)[0]  # noqa: E731
    final = evaluate(eval_env, act, cfg.eval_episodes, make_rng(seed, STREAM_EVAL + 100), max_q, cfg.gamma)
    final = [{"seed": seed, "episode": i, **r, "unsafe_visits": run.unsafe_visits} for i, r in enumerate(final)]
    tensors = {**_q_tensors(learner), **policy.net_.tensors("pi")}
    run.checkpoint("final", {**meta, "policy_spec": policy.net_.spec(), "prior": param}, tensors)
    return RunResult(seed, run.records, [{k: r[k] for k in RECORD_FIELDS} for r in final], learner, behavior,
                     policy, data, run.training_env_steps(), run.unsafe_visits, run.checkpoints)


def run_seed(cfg: ExperimentConfig, seed: int, out_dir=None) -> RunResult:
    cfg.validate()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if cfg.env == "frozenlake":
        return _run_frozenlake(cfg, seed, out_dir)
    if cfg.discrete:
        return _run_cartpole_discrete(cfg, seed, out_dir)
    return _run_cartpole_continuous(cfg, seed, out_dir)


def run_case(cfg: ExperimentConfig, out_dir=None):
    """Train every configured seed; returns one :class:`RunResult` per seed."""
    return [run_seed(cfg, s, out_dir) for s in cfg.seeds]
