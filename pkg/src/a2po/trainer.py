"""The A2PO training loop, its ablation variants, and checkpoints.

One iteration, in order:

1. sample a minibatch;
2. label it with the advantage condition from the online critics;
3. while ``step <= cvae_steps``: one CVAE (negative ELBO) step;
4. one critic step on both Q-networks and the V-network, bootstrapping from
   the target Q-networks at the actor's ``xi = 1`` action;
5. one actor step;
6. Polyak update of both target Q-networks.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from a2po.actor import XI_STAR, LatentActor
from a2po.approximator import MlpSpec, ParamSet, adam_step, soft_update
from a2po.baselines import ActionActor, ActionPolicy, DecoderPolicy, LatentPolicy
from a2po.critic import AdvantageMode, CriticBundle, advantage_condition, q_td_loss, td_target, v_td_loss
from a2po.cvae import CvaeNets, condition
from a2po.dataset import OfflineDataset, sample_indices
from a2po.envs import EnvSpec, get_env
from a2po.evalsuite import evaluate
from a2po.seeding import stream

VARIANTS = ("a2po", "a2po_fixed_xi", "a2po_discrete_xi", "a2po_no_bc", "cvae_policy_only", "bc", "td3_bc")
LATENT_VARIANTS = ("a2po", "a2po_fixed_xi", "a2po_discrete_xi", "a2po_no_bc")


class TrainingAborted(FloatingPointError):
    def __init__(self, step: int, loss_name: str, value: float):
        super().__init__(f"non-finite {loss_name} ({value}) at step {step}")
        self.step, self.loss_name, self.value = step, loss_name, value


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "one_step_jump"
    total_steps: int = 20_000
    cvae_steps: int = 5_000
    batch_size: int = 256
    gamma: float | None = None  # None: the env's discount
    tau: float = 0.005
    lr: float = 3e-4
    alpha_kl: float = 0.5
    alpha_q: float = 1.0
    advantage_mode: str = "continuous"
    include_bc: bool = True
    seed: int = 0
    eval_every: int = 1_000
    eval_episodes: int = 10
    hidden: tuple[int, ...] = (64, 64)
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    actor_every: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        get_env(self.env)
        AdvantageMode.parse(self.advantage_mode)
        if self.total_steps < 0 or not 0 <= self.cvae_steps <= self.total_steps:
            raise ValueError(f"need 0 <= cvae_steps <= total_steps, got {self.cvae_steps}, {self.total_steps}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.lr <= 0 or self.alpha_q <= 0 or self.alpha_kl < 0:
            raise ValueError("lr and alpha_q must be positive, alpha_kl non-negative")
        if self.seed < 0 or self.eval_every < 0 or self.eval_episodes < 1 or self.actor_every < 1:
            raise ValueError("seed/eval_every must be >= 0, eval_episodes/actor_every >= 1")

    @property
    def env_spec(self) -> EnvSpec:
        return get_env(self.env)

    @property
    def discount(self) -> float:
        return self.env_spec.gamma if self.gamma is None else self.gamma

    @property
    def mode(self) -> AdvantageMode:
        return AdvantageMode.parse(self.advantage_mode)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Variant:
    kind: str = "a2po"
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown variant {self.kind!r}; choose from {VARIANTS}")

    def __str__(self):
        return f"{self.kind}({self.epsilon!r})" if self.kind == "a2po_discrete_xi" else self.kind

    @classmethod
    def parse(cls, text: str) -> "Variant":
        text = text.strip()
        if text.startswith("a2po_discrete_xi"):
            inner = text[len("a2po_discrete_xi"):].strip("():= ")
            return cls("a2po_discrete_xi", float(inner) if inner else 0.1)
        return cls(text)

    def apply(self, config: TrainConfig) -> TrainConfig:
        """Config with the variant's advantage mode / BC switch imposed."""
        if self.kind == "a2po_fixed_xi":
            return dataclasses.replace(config, advantage_mode="fixed_one")
        if self.kind == "a2po_discrete_xi":
            return dataclasses.replace(config, advantage_mode=f"discrete({self.epsilon!r})")
        if self.kind == "a2po_no_bc":
            return dataclasses.replace(config, include_bc=False)
        return config


@dataclass
class TrainState:
    config: TrainConfig
    variant: Variant
    nets: dict[str, ParamSet]
    rng: np.random.Generator
    step: int = 0
    _models: tuple | None = field(default=None, repr=False)

    @property
    def env(self) -> EnvSpec:
        return self.config.env_spec

    @property
    def models(self):
        """(CvaeNets, LatentActor, ActionActor, critic template) for this config."""
        if self._models is None:
            env, hidden = self.env, self.config.hidden
            cvae = CvaeNets.build(env, hidden)
            self._models = (cvae, LatentActor.build(cvae, hidden), ActionActor.build(env, hidden))
        return self._models

    def critic(self) -> CriticBundle:
        env, h = self.env, self.config.hidden
        n = self.nets
        return CriticBundle(
            MlpSpec(env.obs_dim + env.act_dim, h, 1), MlpSpec(env.obs_dim, h, 1),
            n["q1"], n["q2"], n.get("v"), n["q1_target"], n["q2_target"],
        )

    def policy(self):
        cvae, latent_actor, action_actor = self.models
        kind = self.variant.kind
        if kind in LATENT_VARIANTS:
            return LatentPolicy(latent_actor, self.nets["actor"], self.nets["dec"])
        if kind == "cvae_policy_only":
            return DecoderPolicy(cvae, self.nets["dec"])
        return ActionPolicy(action_actor, self.nets["actor"])


def init_state(config: TrainConfig, variant: Variant | str = "a2po") -> TrainState:
    """Fresh networks drawn from the ``init`` stream; training rng from ``train``."""
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    config = variant.apply(config)
    state = TrainState(config, variant, {}, stream(config.seed, "train"))
    cvae, latent_actor, action_actor = state.models
    rng = stream(config.seed, "init")
    nets = {}
    kind = variant.kind
    if kind in LATENT_VARIANTS or kind == "cvae_policy_only":
        nets["enc"], nets["dec"] = cvae.init(rng)
    if kind in LATENT_VARIANTS:
        nets["actor"] = latent_actor.init(rng)
    if kind in ("bc", "td3_bc"):
        nets["actor"] = action_actor.init(rng)
    if kind != "bc":
        critic = CriticBundle.build(state.env, rng, config.hidden)
        nets.update(q1=critic.q1, q2=critic.q2, q1_target=critic.q1_target, q2_target=critic.q2_target)
        if kind != "td3_bc":
            nets["v"] = critic.v
    state.nets = nets
    return state


def _finite(step: int, name: str, value: float) -> float:
    if not np.isfinite(value):
        raise TrainingAborted(step, name, value)
    return value


def _smoothed(a_unit: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    noise = np.clip(cfg.policy_noise * rng.standard_normal(a_unit.shape), -cfg.noise_clip, cfg.noise_clip)
    return np.clip(a_unit + noise, -1.0, 1.0)


def _adam(state: TrainState, name: str, grads: np.ndarray) -> None:
    state.nets[name] = adam_step(state.nets[name], grads, lr=state.config.lr)


def _update_targets(state: TrainState) -> None:
    tau = state.config.tau
    for q in ("q1", "q2"):
        state.nets[f"{q}_target"] = soft_update(state.nets[f"{q}_target"], state.nets[q], tau)


def train_step(state: TrainState, dataset: OfflineDataset, probe: Callable[[str], None] | None = None) -> dict:
    """Advance ``state`` by one iteration and return that step's metrics.

    ``probe`` (if given) is called with each phase name as it starts.
    Non-finite losses raise :class:`TrainingAborted`; numpy's own overflow
    warnings are silenced since the explicit checks report them.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_step(state, dataset, probe or (lambda phase: None))


def _train_step(state: TrainState, dataset: OfflineDataset, probe: Callable[[str], None]) -> dict:
    cfg, rng = state.config, state.rng
    i = state.step + 1
    if i > cfg.total_steps:
        raise ValueError(f"step {i} exceeds total_steps {cfg.total_steps}")
    kind = state.variant.kind
    metrics = {"step": i}

    probe("sample")
    idx = sample_indices(len(dataset), cfg.batch_size, rng)
    s, a = dataset.s[idx], dataset.unit_actions[idx]
    r, s2, done = dataset.r[idx], dataset.s_next[idx], dataset.done[idx]

    if kind == "bc":
        probe("actor")
        cvae, latent_actor, action_actor = state.models
        loss, g = action_actor.bc_loss(state.nets["actor"], s, a)
        metrics["actor_loss"] = _finite(i, "actor_loss", loss)
        _adam(state, "actor", g)
        state.step = i
        return metrics

    if kind == "td3_bc":
        return _td3_bc_step(state, i, s, a, r, s2, done, probe, metrics)

    cvae, latent_actor, _ = state.models
    probe("xi")
    critic = state.critic()
    xi = advantage_condition(critic, s, a, cfg.mode)
    metrics.update(xi_mean=float(xi.mean()), xi_min=float(xi.min()), xi_max=float(xi.max()))

    if i <= cfg.cvae_steps:
        probe("cvae")
        loss, g_enc, g_dec, info = cvae.loss(state.nets["enc"], state.nets["dec"], s, a, xi, cfg.alpha_kl, rng)
        metrics["cvae_loss"] = _finite(i, "cvae_loss", loss)
        metrics["cvae_recon"], metrics["cvae_kl"] = info["recon"], info["kl"]
        _adam(state, "enc", g_enc)
        _adam(state, "dec", g_dec)

    probe("critic")
    dec = state.nets["dec"]
    if kind == "cvae_policy_only":
        z0 = np.zeros((s2.shape[0], cvae.latent_dim))
        a_next = cvae.decode_unit(dec, z0, condition(s2, XI_STAR))[0]
    else:
        a_next = latent_actor.act_unit(state.nets["actor"], dec, s2, XI_STAR)
    a_next = _smoothed(a_next, cfg, rng)
    y = td_target(critic, r, s2, done, a_next, cfg.discount)
    q_loss, g1, g2 = q_td_loss(critic, s, a, r, s2, done, a_next, cfg.discount, target=y)
    v_loss, gv = v_td_loss(critic, s, r, s2, done, a_next, cfg.discount, target=y)
    metrics["q_loss"] = _finite(i, "q_loss", q_loss)
    metrics["v_loss"] = _finite(i, "v_loss", v_loss)
    _adam(state, "q1", g1)
    _adam(state, "q2", g2)
    _adam(state, "v", gv)

    if kind != "cvae_policy_only" and i % cfg.actor_every == 0:
        probe("actor")
        loss, g, info = latent_actor.loss(
            state.nets["actor"], dec, state.critic(), s, a, xi, cfg.alpha_q, cfg.include_bc
        )
        metrics["actor_loss"] = _finite(i, "actor_loss", loss)
        metrics.update(info)
        _adam(state, "actor", g)

    probe("target")
    _update_targets(state)
    state.step = i
    return metrics


def _td3_bc_step(state, i, s, a, r, s2, done, probe, metrics):
    cfg, rng = state.config, state.rng
    _, _, action_actor = state.models
    probe("critic")
    critic = state.critic()
    a_next = _smoothed(action_actor.act_unit(state.nets["actor"], s2), cfg, rng)
    q_loss, g1, g2 = q_td_loss(critic, s, a, r, s2, done, a_next, cfg.discount)
    metrics["q_loss"] = _finite(i, "q_loss", q_loss)
    _adam(state, "q1", g1)
    _adam(state, "q2", g2)
    if i % cfg.actor_every == 0:
        probe("actor")
        loss, g, info = action_actor.td3_bc_loss(state.nets["actor"], state.critic(), s, a, cfg.alpha_q)
        metrics["actor_loss"] = _finite(i, "actor_loss", loss)
        metrics.update(info)
        _adam(state, "actor", g)
    probe("target")
    _update_targets(state)
    state.step = i
    return metrics


def eval_during_training(state: TrainState) -> dict:
    """Return at xi = 1 on a stream keyed by (seed, step); never touches ``state.rng``."""
    rep = evaluate(state.policy(), state.env, XI_STAR, state.config.eval_episodes, stream(state.config.seed, "eval", state.step))
    return {"eval_return": rep.mean_return, "eval_score": rep.normalized_score}


@dataclass
class RunResult:
    state: TrainState
    metrics: list[dict]

    @property
    def nets(self) -> dict[str, ParamSet]:
        return self.state.nets


def run(
    config: TrainConfig,
    dataset: OfflineDataset,
    variant: Variant | str = "a2po",
    state: TrainState | None = None,
    until: int | None = None,
    on_metrics: Callable[[dict], None] | None = None,
    keep_metrics: bool = True,
) -> RunResult:
    """Train from scratch (or resume ``state``) up to ``until`` (default T)."""
    if dataset.spec.name != config.env:
        raise ValueError(f"dataset env {dataset.spec.name!r} does not match config env {config.env!r}")
    if state is None:
        state = init_state(config, variant)
    stop = state.config.total_steps if until is None else min(until, state.config.total_steps)
    out = []
    every = state.config.eval_every
    while state.step < stop:
        m = train_step(state, dataset)
        if every and (state.step % every == 0 or state.step == state.config.total_steps):
            m.update(eval_during_training(state))
        if on_metrics is not None:
            on_metrics(m)
        if keep_metrics:
            out.append(m)
    return RunResult(state, out)


# -- checkpoints ----------------------------------------------------------------

MAGIC = b"A2PO"
CHECKPOINT_VERSION = 1


def _blob(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


def checkpoint_bytes(state: TrainState) -> bytes:
    header = {"config": state.config.to_dict(), "variant": str(state.variant)}
    parts = [MAGIC, struct.pack("<I", CHECKPOINT_VERSION), _blob(json.dumps(header, sort_keys=True).encode())]
    parts.append(struct.pack("<I", len(state.nets)))
    for name in sorted(state.nets):
        p = state.nets[name]
        parts.append(_blob(name.encode()))
        parts.append(struct.pack("<QQ", p.step, p.flat.size))
        for arr in (p.flat, p.m, p.v):
            parts.append(arr.astype("<f8").tobytes())
    rng_state = state.rng.bit_generator.state
    parts.append(_blob(json.dumps(rng_state, sort_keys=True).encode()))
    parts.append(struct.pack("<Q", state.step))
    return b"".join(parts)


def checkpoint_write(state: TrainState, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<Q")
        return self.take(n)


def checkpoint_read(path) -> TrainState:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e.strerror})") from e
    rd = _Reader(data, path)
    if rd.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an A2PO checkpoint (bad magic bytes)")
    (version,) = rd.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(rd.blob().decode())
        config = TrainConfig.from_dict(header["config"])
        variant = Variant.parse(header["variant"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: bad checkpoint header ({e})") from e
    nets = {}
    (count,) = rd.unpack("<I")
    for _ in range(count):
        name = rd.blob().decode()
        step, n = rd.unpack("<QQ")
        arrs = [np.frombuffer(rd.take(8 * n), dtype="<f8").astype(np.float64) for _ in range(3)]
        nets[name] = ParamSet(arrs[0], arrs[1], arrs[2], step)
    try:
        rng_state = json.loads(rd.blob().decode())
        bitgen = getattr(np.random, rng_state["bit_generator"])()
        bitgen.state = rng_state
    except (ValueError, KeyError, TypeError, AttributeError) as e:
        raise CheckpointError(f"{path}: bad rng state ({e})") from e
    (step,) = rd.unpack("<Q")
    if rd.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - rd.pos} trailing bytes")
    state = TrainState(config, variant, nets, np.random.Generator(bitgen), step)
    expected = init_state(config, variant)
    for name, p in expected.nets.items():
        if name not in nets or nets[name].flat.shape != p.flat.shape:
            raise CheckpointError(f"{path}: network {name!r} missing or mis-shaped for this config")
    return state
