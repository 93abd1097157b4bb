"""Advantage-conditioned VAE over actions.

The condition is ``c = s || xi``. The encoder reads ``a || c`` and emits a
diagonal Gaussian over the latent; the decoder reads ``z || c`` and emits a
tanh-squashed action. Internally actions live in unit space ([-1, 1] per
dimension, see :meth:`EnvSpec.to_unit`); :meth:`CvaeNets.decode` maps back to
the env box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from a2po.approximator import MlpSpec, ParamSet, ShapeError, init_params, mlp_backward, mlp_forward
from a2po.envs import EnvSpec

LOG_STD_MIN, LOG_STD_MAX = -4.0, 4.0


@dataclass(frozen=True)
class GaussianHead:
    mean: np.ndarray
    log_std: np.ndarray


def condition(s, xi) -> np.ndarray:
    """``s || xi`` for a single state or a row batch."""
    s = np.asarray(s, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if s.ndim == 1:
        return np.concatenate([s, np.atleast_1d(xi)])
    return np.concatenate([s, np.broadcast_to(xi, (s.shape[0],)).reshape(-1, 1)], axis=1)


def reparameterize(head: GaussianHead, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != np.shape(head.mean):
        raise ShapeError(f"noise shape {noise.shape} != latent shape {np.shape(head.mean)}")
    return head.mean + np.exp(head.log_std) * noise


def kl_to_standard_normal(head: GaussianHead) -> float | np.ndarray:
    """KL(N(mean, exp(log_std)^2) || N(0, I)), summed over the last axis."""
    mu, ls = np.asarray(head.mean), np.asarray(head.log_std)
    # expm1 keeps the log_std terms non-negative when log_std is tiny
    return 0.5 * np.sum(mu * mu + np.expm1(2.0 * ls) - 2.0 * ls, axis=-1)


@dataclass(frozen=True)
class CvaeNets:
    env: EnvSpec
    enc: MlpSpec
    dec: MlpSpec

    @classmethod
    def build(cls, env: EnvSpec, hidden=(64, 64), latent_dim: int | None = None) -> "CvaeNets":
        latent = latent_dim or 2 * env.act_dim
        cdim = env.obs_dim + 1
        return cls(
            env,
            MlpSpec(env.act_dim + cdim, tuple(hidden), 2 * latent),
            MlpSpec(latent + cdim, tuple(hidden), env.act_dim, output_activation="tanh"),
        )

    @property
    def latent_dim(self) -> int:
        return self.enc.output_dim // 2

    def init(self, rng: np.random.Generator) -> tuple[ParamSet, ParamSet]:
        return init_params(self.enc, rng), init_params(self.dec, rng)

    def _encode(self, enc: ParamSet, a_unit, c):
        a_unit, c = np.asarray(a_unit, dtype=np.float64), np.asarray(c, dtype=np.float64)
        x = np.concatenate([a_unit, c], axis=-1)
        out, tape = mlp_forward(self.enc, enc, x)
        k = self.latent_dim
        raw_ls = out[..., k:]
        head = GaussianHead(out[..., :k], np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX))
        return head, tape, raw_ls

    def encode(self, enc: ParamSet, a, c) -> GaussianHead:
        """Gaussian head for env-space action ``a`` under condition ``c``."""
        if np.shape(a)[-1:] != (self.env.act_dim,):
            raise ShapeError(f"action must have {self.env.act_dim} entries, got shape {np.shape(a)}")
        return self._encode(enc, self.env.to_unit(a), c)[0]

    def decode_unit(self, dec: ParamSet, z, c):
        x = np.concatenate([np.asarray(z, dtype=np.float64), np.asarray(c, dtype=np.float64)], axis=-1)
        return mlp_forward(self.dec, dec, x)

    def decode(self, dec: ParamSet, z, c) -> np.ndarray:
        """Env-space action: the squashed decoder output scaled to the box."""
        return self.env.from_unit(self.decode_unit(dec, z, c)[0])

    def loss(
        self,
        enc: ParamSet,
        dec: ParamSet,
        s: np.ndarray,
        a_unit: np.ndarray,
        xi: np.ndarray,
        alpha_kl: float = 0.5,
        rng: np.random.Generator | None = None,
        noise: np.ndarray | None = None,
    ) -> tuple[float, np.ndarray, np.ndarray, dict]:
        """Negative ELBO on a batch, with gradients for encoder and decoder.

        Reconstruction is the squared error in unit action space (a unit-variance
        Gaussian likelihood up to constants). Pass ``noise`` to freeze the
        reparameterization draw; otherwise it comes from ``rng``.
        """
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a_unit = np.atleast_2d(np.asarray(a_unit, dtype=np.float64))
        xi = np.asarray(xi, dtype=np.float64).reshape(-1)
        n = s.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        if np.any(np.abs(xi) > 1.0):
            raise ValueError("advantage condition must lie in [-1, 1]")
        c = condition(s, xi)
        head, etape, raw_ls = self._encode(enc, a_unit, c)
        if noise is None:
            noise = rng.standard_normal(head.mean.shape)
        std = np.exp(head.log_std)
        z = head.mean + std * noise
        recon, dtape = self.decode_unit(dec, z, c)

        err = recon - a_unit
        rec_term = np.sum(err * err, axis=1)
        kl = kl_to_standard_normal(head)
        loss = float(np.mean(rec_term + alpha_kl * kl))

        dgrad = mlp_backward(self.dec, dec, dtape, 2.0 * err / n)
        dz = dgrad.input_grad[:, : self.latent_dim]
        d_mean = dz + alpha_kl * head.mean / n
        d_ls = dz * std * noise + alpha_kl * (std * std - 1.0) / n
        d_ls = d_ls * ((raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX))
        egrad = mlp_backward(self.enc, enc, etape, np.concatenate([d_mean, d_ls], axis=1))
        info = {"recon": float(np.mean(rec_term)), "kl": float(np.mean(kl))}
        return loss, egrad.param_grads, dgrad.param_grads, info
