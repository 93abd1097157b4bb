"""Twin Q-networks, the V-network, TD losses and the advantage condition."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from a2po.approximator import MlpSpec, ParamSet, init_params, mlp_backward, mlp_forward
from a2po.envs import EnvSpec


@dataclass(frozen=True)
class AdvantageMode:
    """How the advantage condition is derived from the critics.

    ``continuous``: tanh(min_i Q_i - V). ``discrete``: sign of that value,
    zeroed where its magnitude is at most ``epsilon``. ``fixed_one``: always 1.
    """

    kind: str = "continuous"
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete", "fixed_one"):
            raise ValueError(f"unknown advantage mode {self.kind!r}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")

    def __str__(self):
        return f"discrete({self.epsilon!r})" if self.kind == "discrete" else self.kind

    @classmethod
    def parse(cls, text: str) -> "AdvantageMode":
        text = text.strip()
        if text.startswith("discrete"):
            inner = text[len("discrete"):].strip("():= ")
            return cls("discrete", float(inner) if inner else 0.0)
        return cls(text)


@dataclass
class CriticBundle:
    q_spec: MlpSpec
    v_spec: MlpSpec
    q1: ParamSet
    q2: ParamSet
    v: ParamSet
    q1_target: ParamSet
    q2_target: ParamSet

    @classmethod
    def build(cls, env: EnvSpec, rng: np.random.Generator, hidden=(64, 64)) -> "CriticBundle":
        q_spec = MlpSpec(env.obs_dim + env.act_dim, tuple(hidden), 1)
        v_spec = MlpSpec(env.obs_dim, tuple(hidden), 1)
        q1, q2 = init_params(q_spec, rng), init_params(q_spec, rng)
        v = init_params(v_spec, rng)
        return cls(q_spec, v_spec, q1, q2, v, q1.copy(), q2.copy())

    def replace(self, **kw) -> "CriticBundle":
        return replace(self, **kw)

    def q(self, params: ParamSet, s, a_unit) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a_unit)], axis=1)
        return mlp_forward(self.q_spec, params, x)[0][:, 0]

    def value(self, s) -> np.ndarray:
        return mlp_forward(self.v_spec, self.v, np.atleast_2d(s))[0][:, 0]


def discretize(xi, epsilon: float) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.float64)
    return np.sign(xi) * (np.abs(xi) > epsilon)


def advantage_condition(bundle: CriticBundle, s, a_unit, mode: AdvantageMode = AdvantageMode()) -> np.ndarray:
    """Per-sample advantage condition from the online critics."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if mode.kind == "fixed_one":
        return np.ones(s.shape[0])
    q = np.minimum(bundle.q(bundle.q1, s, a_unit), bundle.q(bundle.q2, s, a_unit))
    xi = np.tanh(q - bundle.value(s))
    if mode.kind == "discrete":
        xi = discretize(xi, mode.epsilon)
    return xi


def td_target(bundle: CriticBundle, r, s_next, done, a_star_unit, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * min_j Qtarget_j(s', a*)``."""
    q_next = np.minimum(
        bundle.q(bundle.q1_target, s_next, a_star_unit),
        bundle.q(bundle.q2_target, s_next, a_star_unit),
    )
    done = np.asarray(done, dtype=np.float64)
    return np.asarray(r, dtype=np.float64) + gamma * (1.0 - done) * q_next


def q_td_loss(bundle: CriticBundle, s, a_unit, r, s_next, done, a_star_unit, gamma: float, target=None):
    """Loss averaged over the batch and over both Q-networks.

    Returns ``(loss, grad_q1, grad_q2)``; the targets are treated as constants.
    """
    y = td_target(bundle, r, s_next, done, a_star_unit, gamma) if target is None else target
    x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a_unit)], axis=1)
    n = x.shape[0]
    loss = 0.0
    grads = []
    for params in (bundle.q1, bundle.q2):
        out, tape = mlp_forward(bundle.q_spec, params, x)
        err = out[:, 0] - y
        loss += 0.5 * float(np.mean(err * err))
        grads.append(mlp_backward(bundle.q_spec, params, tape, (err / n)[:, None]).param_grads)
    return loss, grads[0], grads[1]


def v_td_loss(bundle: CriticBundle, s, r, s_next, done, a_star_unit, gamma: float, target=None):
    """Mean squared one-step Bellman residual of V. Returns ``(loss, grad_v)``."""
    y = td_target(bundle, r, s_next, done, a_star_unit, gamma) if target is None else target
    s = np.atleast_2d(s)
    out, tape = mlp_forward(bundle.v_spec, bundle.v, s)
    err = out[:, 0] - y
    n = s.shape[0]
    grad = mlp_backward(bundle.v_spec, bundle.v, tape, (2.0 * err / n)[:, None]).param_grads
    return float(np.mean(err * err)), grad
