"""Shared MDP types, distributions, seeded random streams and return accounting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

# Named RNG streams. One independent stream per component keeps runs
# reproducible when a component changes how many numbers it draws.
STREAM_ENV = 0
STREAM_BEHAVIOR = 1
STREAM_AGENT = 2
STREAM_EVAL = 3
STREAM_DATASET = 4
STREAM_EXTRACT = 5

SUM_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when an argument violates a documented precondition."""


def make_rng(master_seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return a PCG64 generator for ``(master_seed, stream_id)``.

    Streams are derived with ``numpy.random.SeedSequence`` spawn keys, so the
    same pair gives the same sequence on every platform numpy supports.
    """
    seq = np.random.SeedSequence(int(master_seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(seq))


def validate_probs(probs: Any, *, name: str = "probs") -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValidationError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValidationError(f"{name} has negative or non-finite entries: {p}")
    total = p.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise ValidationError(f"{name} sums to {total!r}, not 1")
    return p / total


@dataclass(frozen=True)
class DiscreteDistribution:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", validate_probs(self.probs))

    def __len__(self) -> int:
        return len(self.probs)


def sample_discrete(dist: DiscreteDistribution | Sequence[float], rng: np.random.Generator) -> int:
    """Draw an index with probability ``dist.probs[i]``."""
    if not isinstance(dist, DiscreteDistribution):
        dist = DiscreteDistribution(np.asarray(dist, dtype=float))
    cdf = np.cumsum(dist.probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(cdf) - 1)


def greedy_action(q_row: Sequence[float]) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    q = np.asarray(q_row, dtype=float)
    if q.ndim != 1 or q.size == 0:
        raise ValidationError("greedy_action needs a non-empty 1-D row")
    return int(np.argmax(q))


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValidationError(f"gamma must lie in [0, 1), got {gamma}")
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return float(total)


@dataclass
class Transition:
    """One environment step.

    ``terminal`` marks a failure or goal (no bootstrapping). A time-limit cut
    is reported through ``truncated`` and still bootstraps.
    """

    state: Any
    action: Any
    reward: float
    next_state: Any
    terminal: bool
    truncated: bool = False

    @property
    def bootstrap(self) -> float:
        return 0.0 if self.terminal else 1.0


@dataclass(frozen=True)
class ContinuousAction:
    value: np.ndarray
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        lo = np.broadcast_to(np.asarray(self.low, dtype=float), v.shape)
        hi = np.broadcast_to(np.asarray(self.high, dtype=float), v.shape)
        if np.any(v < lo) or np.any(v > hi):
            raise ValidationError(f"action {v} outside bounds [{lo}, {hi}]")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)


@dataclass
class TabularMdp:
    """Explicit finite MDP.

    ``transition[s, a, s2]`` is P(s2 | s, a); ``reward[s, a]`` the expected
    immediate reward. Successors in ``terminal_states`` are not bootstrapped.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal_states: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        S, A, S2 = self.transition.shape
        if S != S2 or self.reward.shape != (S, A):
            raise ValidationError("inconsistent MDP shapes")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError("gamma must lie in [0, 1)")
        for s in range(S):
            for a in range(A):
                validate_probs(self.transition[s, a], name=f"P(.|{s},{a})")
        self.terminal_states = frozenset(int(s) for s in self.terminal_states)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def continuation(self) -> np.ndarray:
        """1 for non-terminal states, 0 for terminal ones."""
        c = np.ones(self.num_states)
        for s in self.terminal_states:
            c[s] = 0.0
        return c


def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int, gamma: float) -> TabularMdp:
    """Dense random MDP with Dirichlet transitions and U[-1, 1] rewards."""
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    R = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    return TabularMdp(P, R, gamma)


def random_positive_rows(rng: np.random.Generator, rows: int, cols: int, floor: float = 1e-3) -> np.ndarray:
    p = rng.dirichlet(np.ones(cols), size=rows) + floor
    return p / p.sum(axis=1, keepdims=True)
