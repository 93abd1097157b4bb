"""Policy evaluation, advantage-input sweeps, latent PCA export, seed aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from a2po.envs import (
    EnvSpec,
    batch_reset,
    normalized_score,
    reference_returns,
    rollout_returns,
    scripted_actions,
)
from a2po.seeding import child_seed

PCA_TOL = 1e-10
PCA_MAX_ITER = 1000


@dataclass(frozen=True)
class EvalReport:
    mean_return: float
    std_return: float
    normalized_score: float
    episodes: int
    xi_used: float

    def to_json(self, variant: str, seed: int) -> dict:
        return {
            "variant": variant,
            "seed": seed,
            "xi": self.xi_used,
            "mean": self.mean_return,
            "std": self.std_return,
            "norm_score": self.normalized_score,
            "episodes": self.episodes,
        }


class ScriptedAgent:
    """Wraps a behavior tier so it can be evaluated like a trained agent."""

    def __init__(self, env: EnvSpec, tier, rng: np.random.Generator):
        self.env, self.tier, self.rng = env, tier, rng

    def act(self, obs, xi):
        return scripted_actions(self.env, self.tier, np.atleast_2d(obs), self.rng)


def evaluate(agent, env: EnvSpec, xi_fixed: float, n_episodes: int, rng: np.random.Generator, refs=None) -> EvalReport:
    """Mean/std undiscounted return of ``agent.act(obs, xi_fixed)`` rollouts."""
    if not -1.0 <= xi_fixed <= 1.0:
        raise ValueError(f"xi must lie in [-1, 1], got {xi_fixed}")
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    random_ref, expert_ref = refs if refs is not None else reference_returns(env.name)
    obs = batch_reset(env, n_episodes, rng)
    returns = rollout_returns(env, lambda o, t: agent.act(o, xi_fixed), obs)
    mean = float(np.mean(returns))
    return EvalReport(
        mean, float(np.std(returns)), normalized_score(mean, random_ref, expert_ref), n_episodes, float(xi_fixed)
    )


def xi_sweep(agent, env: EnvSpec, xis=(-1.0, 0.0, 1.0), n_episodes: int = 10, rng=None, refs=None) -> list[EvalReport]:
    """One report per advantage input, every input seeing the same start states."""
    seed = child_seed(rng if rng is not None else np.random.default_rng())
    return [evaluate(agent, env, float(xi), n_episodes, np.random.default_rng(seed), refs) for xi in xis]


def aggregate_seeds(reports, key: str = "mean_return") -> tuple[float, float]:
    """Mean and population std of one report field across seeds."""
    values = [getattr(r, key) for r in reports]
    if len(values) < 2:
        raise ValueError("aggregate_seeds needs at least two seeds")
    return float(np.mean(values)), float(np.std(values))


# -- PCA --------------------------------------------------------------------

@dataclass(frozen=True)
class Pca2Result:
    projected: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d), orthonormal rows
    variances: np.ndarray  # (2,)
    mean: np.ndarray
    degenerate: bool  # True when the data has rank < 2


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    return -v if nz.size and v[nz[0]] < 0 else v


def _power(cov: np.ndarray, start: np.ndarray, against: np.ndarray | None):
    v = start
    lam = 0.0
    for _ in range(PCA_MAX_ITER):
        w = cov @ v
        if against is not None:
            w -= (against @ w) * against
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        lam = float(w @ cov @ w)
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < PCA_TOL:
            return w, lam
        v = w
    return v, lam


def pca2(points) -> Pca2Result:
    """Top-2 principal components by power iteration with deflation.

    Both power iterations start from a basis vector (the first one not
    parallel to the previous component), so the result is deterministic.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"pca2 needs >= 3 points of dimension >= 2, got shape {x.shape}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    d = x.shape[1]
    eye = np.eye(d)

    c1, lam1 = _power(cov, eye[0], None)
    c1 = _sign_fix(c1 / np.linalg.norm(c1))

    start = None
    for e in eye:
        r = e - (c1 @ e) * c1
        if np.linalg.norm(r) > 1e-6:
            start = r / np.linalg.norm(r)
            break
    deflated = cov - lam1 * np.outer(c1, c1)
    c2, lam2 = _power(deflated, start, c1)
    c2 = c2 - (c1 @ c2) * c1
    c2 = _sign_fix(c2 / np.linalg.norm(c2))

    scale = max(lam1, np.trace(cov), 1e-300)
    degenerate = lam2 <= 1e-12 * scale
    comps = np.stack([c1, c2])
    return Pca2Result(xc @ comps.T, comps, np.array([lam1, lam2]), mean, bool(degenerate))


# -- latent dump --------------------------------------------------------------

@dataclass(frozen=True)
class LatentDump:
    xi: np.ndarray
    latent: np.ndarray
    projected: np.ndarray
    ret: np.ndarray
    pca: Pca2Result


def export_latent_dump(agent, env: EnvSpec, n_samples: int, rng: np.random.Generator, path) -> LatentDump:
    """Sample advantage inputs, record the actor's latent at one start state and
    the return of an episode driven by that fixed input, and write a CSV.

    ``agent`` needs ``latent(obs, xi)`` and ``act(obs, xi)``.
    """
    path = Path(path)
    xis = rng.uniform(-1.0, 1.0, size=n_samples)
    s0 = batch_reset(env, 1, rng)[0]
    obs = np.tile(s0, (n_samples, 1))
    latent = agent.latent(obs, xis)
    ret = rollout_returns(env, lambda o, t: agent.act(o, xis), obs)
    pca = pca2(latent)

    header = ["xi", *(f"z_{k}" for k in range(latent.shape[1])), "p_0", "p_1", "ret"]
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for i in range(n_samples):
                row = [xis[i], *latent[i], *pca.projected[i], ret[i]]
                w.writerow([repr(float(v)) for v in row])
    except OSError as e:
        raise OSError(f"cannot write latent dump to {path}: {e.strerror}") from e
    return LatentDump(xis, latent, pca.projected, ret, pca)
