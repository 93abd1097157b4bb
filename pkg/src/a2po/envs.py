"""Toy continuous-control tasks with scripted behavior policies.

``one_step_jump``: the agent stands at 0 and makes a single jump
``a in [-10, 10]``. Landing within 0.5 of +7 pays 10, within 0.5 of -6 pays 5,
landing on an obstacle band ([2, 5] or [-4, -2]) pays -1, and anything else
pays ``-0.1 * |a|``.

``point_mass``: a 2-D point moves by ``0.25 * a`` per step toward a fixed goal
at (2, 2) for 20 steps and pays the negative distance to the goal after every
move. Observations are ``(position, goal - position)``.

Dynamics are deterministic; randomness only enters through :func:`reset`
and the scripted policies, both driven by an explicit generator.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from a2po.seeding import stream


class BehaviorTier(str, enum.Enum):
    RANDOM = "random"
    MEDIUM = "medium"
    EXPERT = "expert"


TIER_ORDER = (BehaviorTier.RANDOM, BehaviorTier.MEDIUM, BehaviorTier.EXPERT)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    horizon: int
    gamma: float

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if len(self.action_low) != self.act_dim or len(self.action_high) != self.act_dim:
            raise ValueError("action bounds must have act_dim entries")
        if not all(lo < hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ValueError("action_low must be below action_high elementwise")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.action_low, dtype=np.float64)

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.action_high, dtype=np.float64)

    @property
    def action_mid(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    @property
    def action_half(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    def to_unit(self, a) -> np.ndarray:
        """Map env actions onto [-1, 1] per dimension."""
        return (np.asarray(a, dtype=np.float64) - self.action_mid) / self.action_half

    def from_unit(self, u) -> np.ndarray:
        return self.action_mid + self.action_half * np.asarray(u, dtype=np.float64)

    def clamp(self, a) -> np.ndarray:
        return np.clip(np.asarray(a, dtype=np.float64), self.low, self.high)


ONE_STEP_JUMP = EnvSpec("one_step_jump", 1, 1, (-10.0,), (10.0,), 1, 1.0)
POINT_MASS = EnvSpec("point_mass", 4, 2, (-1.0, -1.0), (1.0, 1.0), 20, 0.99)
ENVS = {spec.name: spec for spec in (ONE_STEP_JUMP, POINT_MASS)}

# one_step_jump reward table
FAR_GOAL, FAR_REWARD = 7.0, 10.0
NEAR_GOAL, NEAR_REWARD = -6.0, 5.0
GOAL_RADIUS = 0.5
OBSTACLES = ((2.0, 5.0), (-4.0, -2.0))
OBSTACLE_REWARD = -1.0

# point_mass
PM_GOAL = np.array([2.0, 2.0])
PM_STEP = 0.25
PM_START = (-1.0, 1.0)

# scripted controllers
PM_GAIN = 2.0
EXPERT_NOISE = {"one_step_jump": 0.15, "point_mass": 0.05}
MEDIUM_NOISE = {"one_step_jump": 1.5, "point_mass": 0.4}
MEDIUM_RANDOM_FRAC = 0.3


def get_env(name: str) -> EnvSpec:
    try:
        return ENVS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None


@dataclass
class EnvState:
    observation: np.ndarray
    step_index: int = 0
    terminated: bool = False
    clamped: bool = False  # whether the action that produced this state was clamped


def jump_reward(a) -> np.ndarray:
    """Reward table of one_step_jump, vectorized over landing positions."""
    a = np.asarray(a, dtype=np.float64)
    r = -0.1 * np.abs(a)
    for lo, hi in OBSTACLES:
        r = np.where((a >= lo) & (a <= hi), OBSTACLE_REWARD, r)
    r = np.where(np.abs(a - NEAR_GOAL) <= GOAL_RADIUS, NEAR_REWARD, r)
    r = np.where(np.abs(a - FAR_GOAL) <= GOAL_RADIUS, FAR_REWARD, r)
    return r


def batch_reset(spec: EnvSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.name == "one_step_jump":
        return np.zeros((n, 1))
    pos = rng.uniform(PM_START[0], PM_START[1], size=(n, 2))
    return np.concatenate([pos, PM_GOAL - pos], axis=1)


def batch_step(spec: EnvSpec, obs: np.ndarray, actions) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic transition for a batch of observations; clamps actions."""
    a = spec.clamp(actions)
    if spec.name == "one_step_jump":
        return a.copy(), jump_reward(a[:, 0])
    pos = obs[:, :2] + PM_STEP * a
    nxt = np.concatenate([pos, PM_GOAL - pos], axis=1)
    return nxt, -np.linalg.norm(pos - PM_GOAL, axis=1)


def reset(spec: EnvSpec, rng: np.random.Generator) -> EnvState:
    return EnvState(batch_reset(spec, 1, rng)[0])


def step(spec: EnvSpec, state: EnvState, action) -> tuple[EnvState, float]:
    if state.terminated:
        raise RuntimeError(f"cannot step a terminated {spec.name} episode")
    action = np.asarray(action, dtype=np.float64).reshape(spec.act_dim)
    clamped = bool(np.any(spec.clamp(action) != action))
    nxt, r = batch_step(spec, state.observation[None, :], action[None, :])
    t = state.step_index + 1
    return EnvState(nxt[0], t, t >= spec.horizon, clamped), float(r[0])


def scripted_actions(spec: EnvSpec, tier, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Behavior-policy actions for a batch of observations."""
    tier = BehaviorTier(tier)
    n = obs.shape[0]
    if tier is BehaviorTier.RANDOM:
        return rng.uniform(spec.low, spec.high, size=(n, spec.act_dim))

    if spec.name == "one_step_jump":
        if tier is BehaviorTier.EXPERT:
            a = FAR_GOAL + EXPERT_NOISE[spec.name] * rng.standard_normal((n, 1))
        else:
            centers = np.where(rng.random((n, 1)) < 0.5, FAR_GOAL, NEAR_GOAL)
            a = centers + MEDIUM_NOISE[spec.name] * rng.standard_normal((n, 1))
    else:
        a = spec.clamp(PM_GAIN * obs[:, 2:4])
        sigma = EXPERT_NOISE[spec.name] if tier is BehaviorTier.EXPERT else MEDIUM_NOISE[spec.name]
        a = a + sigma * rng.standard_normal((n, spec.act_dim))

    if tier is BehaviorTier.MEDIUM:
        explore = rng.random(n) < MEDIUM_RANDOM_FRAC
        uniform = rng.uniform(spec.low, spec.high, size=(n, spec.act_dim))
        a = np.where(explore[:, None], uniform, a)
    return spec.clamp(a)


def scripted_action(spec: EnvSpec, tier, state: EnvState, rng: np.random.Generator) -> np.ndarray:
    if state.terminated:
        raise RuntimeError("episode already terminated")
    return scripted_actions(spec, tier, state.observation[None, :], rng)[0]


def rollout_returns(spec: EnvSpec, policy, obs: np.ndarray) -> np.ndarray:
    """Undiscounted returns of lock-step episodes started at ``obs``.

    ``policy(obs_batch, t)`` must return a batch of env-space actions.
    """
    ret = np.zeros(obs.shape[0])
    for t in range(spec.horizon):
        obs, r = batch_step(spec, obs, policy(obs, t))
        ret += r
    return ret


def tier_returns(spec: EnvSpec, tier, n_episodes: int, rng: np.random.Generator) -> np.ndarray:
    obs = batch_reset(spec, n_episodes, rng)
    return rollout_returns(spec, lambda o, t: scripted_actions(spec, tier, o, rng), obs)


@lru_cache(maxsize=None)
def reference_returns(name: str, n_episodes: int = 10_000) -> tuple[float, float]:
    """Monte-Carlo (random, expert) mean returns used as score anchors."""
    spec = get_env(name)
    rand = tier_returns(spec, BehaviorTier.RANDOM, n_episodes, stream(0, "reference", 0))
    expert = tier_returns(spec, BehaviorTier.EXPERT, n_episodes, stream(0, "reference", 1))
    return float(rand.mean()), float(expert.mean())


def normalized_score(raw: float, random_ref: float, expert_ref: float) -> float:
    if not expert_ref > random_ref:
        raise ValueError(f"expert_ref ({expert_ref}) must exceed random_ref ({random_ref})")
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)
