"""FrozenLake 4x4 (deterministic) and CartPole dynamics with safe-set predicates.

CartPole constants follow the usual reference values: gravity 9.8, cart mass
1.0, pole mass 0.1, half-length 0.5, force magnitude 10.0, step 0.02 s,
position bound 2.4 m, angle bound 12 degrees, 500-step time limit.
"""
from __future__ import annotations

import math

import numpy as np

from .core import TabularMdp, Transition, ValidationError

LEFT, DOWN, RIGHT, UP = 0, 1, 2, 3

FROZENLAKE_MAP = ("SFFF", "FHFH", "FFFH", "HFFG")
NROW = NCOL = 4
HOLES = frozenset(i for i, c in enumerate("".join(FROZENLAKE_MAP)) if c == "H")
GOAL = "".join(FROZENLAKE_MAP).index("G")
START = "".join(FROZENLAKE_MAP).index("S")

UNSAFE_ANGLE = math.radians(9.0)
TERMINAL_ANGLE = 12 * 2 * math.pi / 360
POSITION_BOUND = 2.4
MAX_STEPS = 500

# Typical magnitudes of (x, x_dot, theta, theta_dot) in the safe operating
# region. Networks see state / CARTPOLE_STATE_SCALE.
CARTPOLE_STATE_SCALE = np.array([0.5, 0.5, 0.05, 0.5])


class UsageError(RuntimeError):
    pass


def fl_successor(state: int, action: int) -> int:
    row, col = divmod(int(state), NCOL)
    if action == LEFT:
        col = max(col - 1, 0)
    elif action == DOWN:
        row = min(row + 1, NROW - 1)
    elif action == RIGHT:
        col = min(col + 1, NCOL - 1)
    elif action == UP:
        row = max(row - 1, 0)
    else:
        raise ValidationError(f"invalid FrozenLake action {action}")
    return row * NCOL + col


def fl_is_terminal(state: int) -> bool:
    return state in HOLES or state == GOAL


class FrozenLakeEnv:
    """Non-slippery 4x4 FrozenLake. Reward 1 on reaching the goal, else 0."""

    num_states = NROW * NCOL
    num_actions = 4
    holes = HOLES
    goal = GOAL

    def __init__(self, max_steps: int = 100):
        self.max_steps = max_steps
        self.state = START
        self.steps = 0
        self.done = False

    def reset(self, rng=None) -> int:
        self.state = START
        self.steps = 0
        self.done = False
        return self.state

    def step(self, action: int) -> Transition:
        if self.done:
            raise UsageError("step() called on a finished FrozenLake episode; call reset()")
        s = self.state
        s2 = fl_successor(s, action)
        terminal = fl_is_terminal(s2)
        self.steps += 1
        truncated = not terminal and self.steps >= self.max_steps
        self.state = s2
        self.done = terminal or truncated
        return Transition(s, int(action), 1.0 if s2 == GOAL else 0.0, s2, terminal, truncated)

    @staticmethod
    def is_unsafe(state: int) -> bool:
        return int(state) in HOLES

    def model(self, gamma: float = 0.99) -> TabularMdp:
        """Exact tabular model; terminal states self-loop with zero reward."""
        S, A = self.num_states, self.num_actions
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for s in range(S):
            for a in range(A):
                if fl_is_terminal(s):
                    P[s, a, s] = 1.0
                    continue
                s2 = fl_successor(s, a)
                P[s, a, s2] = 1.0
                R[s, a] = 1.0 if s2 == GOAL else 0.0
        return TabularMdp(P, R, gamma, frozenset(HOLES | {GOAL}))


def cartpole_derivatives(state, force: float, gravity=9.8, masscart=1.0, masspole=0.1, length=0.5):
    """Return (x_acc, theta_acc) of the cart-pole equations of motion."""
    _, _, theta, theta_dot = state
    total_mass = masscart + masspole
    polemass_length = masspole * length
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + polemass_length * theta_dot**2 * sintheta) / total_mass
    thetaacc = (gravity * sintheta - costheta * temp) / (
        length * (4.0 / 3.0 - masspole * costheta**2 / total_mass)
    )
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    return xacc, thetaacc


class CartPoleEnv:
    """Cart-pole balancing with explicit Euler integration.

    ``action_mode`` is ``"discrete"`` (0 = push left, 1 = push right) or
    ``"continuous"`` (a value in [-1, 1] scaled by the force magnitude).
    """

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5
    force_mag = 10.0
    tau = 0.02

    def __init__(self, action_mode: str = "discrete", max_steps: int = MAX_STEPS):
        if action_mode not in ("discrete", "continuous"):
            raise ValidationError(f"unknown action_mode {action_mode!r}")
        self.action_mode = action_mode
        self.max_steps = max_steps
        self.state = np.zeros(4)
        self.steps = 0
        self.done = False

    @property
    def num_actions(self) -> int:
        return 2

    def reset(self, rng: np.random.Generator | None = None, state=None) -> np.ndarray:
        if state is not None:
            self.state = np.array(state, dtype=float)
        else:
            self.state = rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        self.done = False
        return self.state.copy()

    def force(self, action) -> float:
        if self.action_mode == "discrete":
            if int(action) not in (0, 1):
                raise ValidationError(f"invalid discrete CartPole action {action}")
            return self.force_mag if int(action) == 1 else -self.force_mag
        a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
        return a * self.force_mag

    def step(self, action) -> Transition:
        if self.done:
            raise UsageError("step() called on a finished CartPole episode; call reset()")
        s = self.state
        xacc, thetaacc = cartpole_derivatives(
            s, self.force(action), self.gravity, self.masscart, self.masspole, self.length
        )
        x, x_dot, theta, theta_dot = s
        nxt = np.array([
            x + self.tau * x_dot,
            x_dot + self.tau * xacc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * thetaacc,
        ])
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError(f"non-finite CartPole state {nxt}")
        self.steps += 1
        terminal = bool(abs(nxt[0]) > POSITION_BOUND or abs(nxt[2]) > TERMINAL_ANGLE)
        truncated = not terminal and self.steps >= self.max_steps
        self.state = nxt
        self.done = terminal or truncated
        stored_action = int(action) if self.action_mode == "discrete" else np.atleast_1d(np.asarray(action, dtype=float)).copy()
        return Transition(s.copy(), stored_action, 1.0, nxt.copy(), terminal, truncated)

    @staticmethod
    def is_unsafe(state) -> bool:
        return bool(abs(state[2]) > UNSAFE_ANGLE)


def is_unsafe(env_state) -> bool:
    """Safe-set predicate: FrozenLake hole cell or CartPole |theta| > 9 degrees."""
    if np.ndim(env_state) == 0:
        return FrozenLakeEnv.is_unsafe(int(env_state))
    return CartPoleEnv.is_unsafe(env_state)
