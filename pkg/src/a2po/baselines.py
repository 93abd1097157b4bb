"""Action-space reference policies (plain BC and TD3+BC) and policy wrappers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from a2po.actor import LatentActor, lambda_coef
from a2po.approximator import MlpSpec, ParamSet, init_params, mlp_backward, mlp_forward
from a2po.critic import CriticBundle
from a2po.cvae import CvaeNets, condition
from a2po.envs import EnvSpec


@dataclass(frozen=True)
class ActionActor:
    """Deterministic ``s -> a`` network with a tanh head (unit action space)."""

    spec: MlpSpec
    env: EnvSpec

    @classmethod
    def build(cls, env: EnvSpec, hidden=(64, 64)) -> "ActionActor":
        return cls(MlpSpec(env.obs_dim, tuple(hidden), env.act_dim, output_activation="tanh"), env)

    def init(self, rng) -> ParamSet:
        return init_params(self.spec, rng)

    def act_unit(self, pi: ParamSet, s) -> np.ndarray:
        return mlp_forward(self.spec, pi, np.atleast_2d(s))[0]

    def bc_loss(self, pi: ParamSet, s, a_unit):
        y, tape = mlp_forward(self.spec, pi, np.atleast_2d(s))
        err = y - a_unit
        n = y.shape[0]
        grad = mlp_backward(self.spec, pi, tape, 2.0 * err / n).param_grads
        return float(np.mean(np.sum(err * err, axis=1))), grad

    def td3_bc_loss(self, pi: ParamSet, critic: CriticBundle, s, a_unit, alpha_q: float):
        s = np.atleast_2d(s)
        n = s.shape[0]
        y, tape = mlp_forward(self.spec, pi, s)
        q, qtape = mlp_forward(critic.q_spec, critic.q1, np.concatenate([s, y], axis=1))
        lam = lambda_coef(q[:, 0], alpha_q)
        dy = mlp_backward(critic.q_spec, critic.q1, qtape, np.full((n, 1), -lam / n)).input_grad[:, s.shape[1]:]
        err = y - a_unit
        dy = dy + 2.0 * err / n
        grad = mlp_backward(self.spec, pi, tape, dy).param_grads
        bc = float(np.mean(np.sum(err * err, axis=1)))
        info = {"lambda": lam, "q_star": float(np.mean(q)), "bc": bc}
        return -lam * float(np.mean(q)) + bc, grad, info


class LatentPolicy:
    """Evaluation wrapper around a trained latent actor and frozen decoder."""

    def __init__(self, actor: LatentActor, pi: ParamSet, dec: ParamSet):
        self.actor, self.pi, self.dec = actor, pi, dec

    def act(self, obs, xi) -> np.ndarray:
        return self.actor.act(self.pi, self.dec, np.atleast_2d(obs), xi)

    def latent(self, obs, xi) -> np.ndarray:
        return self.actor.latent(self.pi, np.atleast_2d(obs), xi)


class DecoderPolicy:
    """The CVAE on its own: ``decode(z = 0, s || xi)``."""

    def __init__(self, cvae: CvaeNets, dec: ParamSet):
        self.cvae, self.dec = cvae, dec

    def act(self, obs, xi) -> np.ndarray:
        obs = np.atleast_2d(obs)
        z = np.zeros((obs.shape[0], self.cvae.latent_dim))
        return self.cvae.decode(self.dec, z, condition(obs, xi))


class ActionPolicy:
    """Unconditioned policy; ignores the advantage input."""

    def __init__(self, actor: ActionActor, pi: ParamSet):
        self.actor, self.pi = actor, pi

    def act(self, obs, xi) -> np.ndarray:
        return self.actor.env.from_unit(self.actor.act_unit(self.pi, obs))
