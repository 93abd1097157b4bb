"""Advantage-aware latent policy and its loss.

The actor maps ``c = s || xi`` to a bounded latent code, which the frozen CVAE
decoder turns into an action. Optimal actions use ``xi = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from a2po.approximator import MlpSpec, ParamSet, init_params, mlp_backward, mlp_forward
from a2po.critic import CriticBundle
from a2po.cvae import CvaeNets, condition

LATENT_BOUND = 2.0
LAMBDA_FLOOR = 1e-8
XI_STAR = 1.0


def lambda_coef(q_values, alpha_q: float = 1.0) -> float:
    """Q-scale normalizer ``alpha_q / mean|Q|`` with the mean floored at 1e-8."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise ValueError("lambda_coef needs a non-empty batch")
    return alpha_q / max(float(np.mean(np.abs(q))), LAMBDA_FLOOR)


@dataclass(frozen=True)
class LatentActor:
    spec: MlpSpec
    cvae: CvaeNets

    @classmethod
    def build(cls, cvae: CvaeNets, hidden=(64, 64)) -> "LatentActor":
        env = cvae.env
        return cls(MlpSpec(env.obs_dim + 1, tuple(hidden), cvae.latent_dim, output_activation="tanh"), cvae)

    def init(self, rng: np.random.Generator) -> ParamSet:
        return init_params(self.spec, rng)

    def latent(self, pi: ParamSet, s, xi) -> np.ndarray:
        return LATENT_BOUND * mlp_forward(self.spec, pi, condition(s, xi))[0]

    def _forward(self, pi: ParamSet, dec: ParamSet, s, xi):
        c = condition(s, xi)
        zt, atape = mlp_forward(self.spec, pi, c)
        y, dtape = self.cvae.decode_unit(dec, LATENT_BOUND * zt, c)
        return y, (atape, dtape)

    def _backward(self, pi: ParamSet, dec: ParamSet, tapes, dy) -> np.ndarray:
        """Actor parameter gradient for dL/d(unit action) ``dy``; decoder gets none."""
        atape, dtape = tapes
        dz = mlp_backward(self.cvae.dec, dec, dtape, dy).input_grad[:, : self.cvae.latent_dim]
        return mlp_backward(self.spec, pi, atape, LATENT_BOUND * dz).param_grads

    def act_unit(self, pi: ParamSet, dec: ParamSet, s, xi) -> np.ndarray:
        return self._forward(pi, dec, s, xi)[0]

    def act(self, pi: ParamSet, dec: ParamSet, s, xi=XI_STAR) -> np.ndarray:
        """Env-space action ``decode(pi(s || xi), s || xi)``."""
        return self.cvae.env.from_unit(self.act_unit(pi, dec, s, xi))

    def loss(
        self,
        pi: ParamSet,
        dec: ParamSet,
        critic: CriticBundle,
        s: np.ndarray,
        a_unit: np.ndarray,
        xi: np.ndarray,
        alpha_q: float = 1.0,
        include_bc: bool = True,
        lam: float | None = None,
    ) -> tuple[float, np.ndarray, dict]:
        """``-lambda * mean Q1(s, a*) + mean ||a - a_xi||^2``.

        ``a*`` decodes at ``xi = 1``; ``a_xi`` decodes at each sample's own
        ``xi``, which is treated as a constant. ``lam`` overrides the
        normalizer (used by gradient checks to hold it fixed).
        """
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        n = s.shape[0]
        y_star, tapes_star = self._forward(pi, dec, s, XI_STAR)
        q_in = np.concatenate([s, y_star], axis=1)
        q, qtape = mlp_forward(critic.q_spec, critic.q1, q_in)
        q = q[:, 0]
        if lam is None:
            lam = lambda_coef(q, alpha_q)
        q_term = -lam * float(np.mean(q))
        dq = np.full((n, 1), -lam / n)
        dy_star = mlp_backward(critic.q_spec, critic.q1, qtape, dq).input_grad[:, s.shape[1]:]
        grads = self._backward(pi, dec, tapes_star, dy_star)

        bc = 0.0
        if include_bc:
            y, tapes = self._forward(pi, dec, s, np.asarray(xi, dtype=np.float64).reshape(-1))
            err = y - np.atleast_2d(a_unit)
            bc = float(np.mean(np.sum(err * err, axis=1)))
            grads = grads + self._backward(pi, dec, tapes, 2.0 * err / n)
        info = {"lambda": float(lam), "q_star": float(np.mean(q)), "bc": bc}
        return q_term + bc, grads, info
