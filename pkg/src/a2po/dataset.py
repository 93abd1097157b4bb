"""Offline transition datasets: collection, proportioned mixing, sampling, I/O.

Datasets are stored column-wise (one float64 array per field) and written as
JSON Lines. The first line is a meta object; every further line is one
transition. Python's float ``repr`` is the shortest decimal that round-trips,
so a written dataset reads back bit-for-bit.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from a2po.envs import (
    TIER_ORDER,
    BehaviorTier,
    EnvSpec,
    batch_reset,
    batch_step,
    get_env,
    scripted_actions,
)
from a2po.seeding import stream

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """A dataset file that cannot be parsed; the message names the line."""


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    tier: BehaviorTier


@dataclass
class OfflineDataset:
    spec: EnvSpec
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    tier: np.ndarray  # object array of tier names
    seed: int = 0
    _unit_a: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.r)
        if self.s.shape != (n, self.spec.obs_dim) or self.s_next.shape != (n, self.spec.obs_dim):
            raise ValueError(f"state columns must have shape ({n}, {self.spec.obs_dim})")
        if self.a.shape != (n, self.spec.act_dim):
            raise ValueError(f"action column must have shape ({n}, {self.spec.act_dim})")
        if self.done.shape != (n,) or self.tier.shape != (n,):
            raise ValueError("done/tier columns must have one entry per transition")

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            self.s[i].copy(), self.a[i].copy(), float(self.r[i]), self.s_next[i].copy(),
            bool(self.done[i]), BehaviorTier(self.tier[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def tier_counts(self) -> dict[str, int]:
        names, counts = np.unique(self.tier.astype(str), return_counts=True)
        found = dict(zip(names.tolist(), counts.tolist()))
        return {t.value: found[t.value] for t in TIER_ORDER if t.value in found}

    @property
    def unit_actions(self) -> np.ndarray:
        if self._unit_a is None:
            self._unit_a = self.spec.to_unit(self.a)
        return self._unit_a

    def take(self, idx) -> "OfflineDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return OfflineDataset(
            self.spec, self.s[idx], self.a[idx], self.r[idx], self.s_next[idx],
            self.done[idx], self.tier[idx], self.seed,
        )

    def bitwise_equal(self, other: "OfflineDataset") -> bool:
        return (
            self.spec == other.spec
            and self.seed == other.seed
            and all(
                getattr(self, k).tobytes() == getattr(other, k).tobytes()
                and getattr(self, k).dtype == getattr(other, k).dtype
                for k in ("s", "a", "r", "s_next", "done")
            )
            and self.tier.tolist() == other.tier.tolist()
        )


def from_transitions(spec: EnvSpec, transitions, seed: int = 0) -> OfflineDataset:
    ts = list(transitions)
    return OfflineDataset(
        spec,
        np.array([t.s for t in ts], dtype=np.float64).reshape(len(ts), spec.obs_dim),
        np.array([t.a for t in ts], dtype=np.float64).reshape(len(ts), spec.act_dim),
        np.array([t.r for t in ts], dtype=np.float64),
        np.array([t.s_next for t in ts], dtype=np.float64).reshape(len(ts), spec.obs_dim),
        np.array([t.done for t in ts], dtype=bool),
        np.array([BehaviorTier(t.tier).value for t in ts], dtype=object),
        seed,
    )


def concatenate(parts: list[OfflineDataset], seed: int = 0) -> OfflineDataset:
    spec = parts[0].spec
    return OfflineDataset(
        spec,
        np.concatenate([p.s for p in parts]),
        np.concatenate([p.a for p in parts]),
        np.concatenate([p.r for p in parts]),
        np.concatenate([p.s_next for p in parts]),
        np.concatenate([p.done for p in parts]),
        np.concatenate([p.tier for p in parts]),
        seed,
    )


def collect(spec: EnvSpec, tier, n_transitions: int, rng: np.random.Generator, seed: int = 0) -> OfflineDataset:
    """Roll out the scripted ``tier`` policy until ``n_transitions`` are stored.

    Episodes run one at a time; the final episode is truncated when the budget
    runs out.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    tier = BehaviorTier(tier)
    cols = {k: [] for k in ("s", "a", "r", "s_next", "done")}
    n = 0
    while n < n_transitions:
        obs = batch_reset(spec, 1, rng)
        for t in range(spec.horizon):
            a = scripted_actions(spec, tier, obs, rng)
            nxt, r = batch_step(spec, obs, a)
            cols["s"].append(obs[0])
            cols["a"].append(a[0])
            cols["r"].append(r[0])
            cols["s_next"].append(nxt[0])
            cols["done"].append(t + 1 >= spec.horizon)
            obs = nxt
            n += 1
            if n == n_transitions:
                break
    return OfflineDataset(
        spec,
        np.array(cols["s"]), np.array(cols["a"]), np.array(cols["r"]),
        np.array(cols["s_next"]), np.array(cols["done"], dtype=bool),
        np.full(n, tier.value, dtype=object), seed,
    )


@dataclass(frozen=True)
class MixRecipe:
    components: tuple[tuple[BehaviorTier, float], ...]
    total: int

    def __post_init__(self):
        comps = tuple((BehaviorTier(t), float(p)) for t, p in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("a recipe needs at least one component")
        if self.total < 1:
            raise ValueError("total must be positive")
        if len({t for t, _ in comps}) != len(comps):
            raise ValueError("each tier may appear only once in a recipe")
        if any(not 0.0 <= p <= 1.0 for _, p in comps):
            raise ValueError("proportions must lie in [0, 1]")
        s = math.fsum(p for _, p in comps)
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"proportions sum to {s:.12g}, not 1")

    @classmethod
    def parse(cls, text: str, total: int) -> "MixRecipe":
        """Parse ``"random:0.5,expert:0.5"``."""
        comps = []
        for part in text.split(","):
            name, sep, prop = part.strip().partition(":")
            if not sep:
                raise ValueError(f"bad recipe component {part!r}; expected tier:proportion")
            comps.append((BehaviorTier(name.strip()), float(prop)))
        return cls(tuple(comps), total)

    def counts(self) -> dict[BehaviorTier, int]:
        # tiny epsilon so e.g. 0.29 * 100 (= 28.999...) floors to 29
        counts = {t: int(math.floor(p * self.total + 1e-9)) for t, p in self.components}
        first = self.components[0][0]
        counts[first] += self.total - sum(counts.values())
        return counts


def mix(recipe: MixRecipe, sources: dict, rng: np.random.Generator, seed: int = 0) -> OfflineDataset:
    """Take the first ``count`` transitions of each source, then shuffle globally."""
    counts = recipe.counts()
    parts = []
    for tier, count in counts.items():
        src = sources.get(tier, sources.get(tier.value))
        have = 0 if src is None else len(src)
        if have < count:
            raise ValueError(f"source for tier {tier.value!r} has {have} transitions, needs {count} (short by {count - have})")
        if count:
            parts.append(src.take(np.arange(count)))
    merged = concatenate(parts, seed)
    return merged.take(rng.permutation(len(merged)))


def generate(spec: EnvSpec, recipe: MixRecipe, seed: int) -> OfflineDataset:
    """Collect every tier of ``recipe`` on its own ``data`` stream, then mix.

    A tier's stream depends only on ``(seed, tier)``, so a single-tier file and
    the matching component of a mixed file hold the same transitions.
    """
    sources = {
        tier: collect(spec, tier, count, stream(seed, "data", TIER_ORDER.index(tier)), seed)
        for tier, count in recipe.counts().items()
        if count
    }
    return mix(recipe, sources, stream(seed, "data", len(TIER_ORDER)), seed)


def sample_indices(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if n == 0:
        raise ValueError("cannot sample from an empty dataset")
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    return rng.integers(0, n, size=batch_size)


def sample_batch(dataset: OfflineDataset, batch_size: int, rng: np.random.Generator) -> list[Transition]:
    """Uniform minibatch with replacement."""
    return [dataset[i] for i in sample_indices(len(dataset), batch_size, rng)]


# -- JSON Lines I/O ---------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_dataset(dataset: OfflineDataset, path) -> None:
    path = Path(path)
    meta = {
        "format_version": FORMAT_VERSION,
        "env": dataset.spec.name,
        "obs_dim": dataset.spec.obs_dim,
        "act_dim": dataset.spec.act_dim,
        "seed": int(dataset.seed),
        "tier_counts": dataset.tier_counts,
    }
    lines = [_dumps(meta)]
    s, a, r, s2 = dataset.s.tolist(), dataset.a.tolist(), dataset.r.tolist(), dataset.s_next.tolist()
    done = dataset.done.tolist()
    for i in range(len(dataset)):
        lines.append(_dumps({"s": s[i], "a": a[i], "r": r[i], "s_next": s2[i], "done": done[i], "tier": str(dataset.tier[i])}))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _vector(rec, key, dim, where):
    v = rec.get(key)
    if not isinstance(v, list) or len(v) != dim:
        got = len(v) if isinstance(v, list) else type(v).__name__
        raise DatasetFormatError(f"{where}: field {key!r} must be a list of {dim} numbers, got {got}")
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise DatasetFormatError(f"{where}: field {key!r} contains non-numbers")
    return [float(x) for x in v]


def read_dataset(path) -> OfflineDataset:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        raw = f.read()
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError(f"{path}:1: empty file")

    def parse(lineno):
        try:
            rec = json.loads(lines[lineno - 1])
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
        if not isinstance(rec, dict):
            raise DatasetFormatError(f"{path}:{lineno}: expected a JSON object")
        return rec

    meta = parse(1)
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}:1: unsupported format_version {meta.get('format_version')!r}")
    try:
        spec = get_env(meta.get("env"))
    except (ValueError, TypeError):
        raise DatasetFormatError(f"{path}:1: unknown env {meta.get('env')!r}") from None
    if meta.get("obs_dim") != spec.obs_dim or meta.get("act_dim") != spec.act_dim:
        raise DatasetFormatError(f"{path}:1: dims ({meta.get('obs_dim')}, {meta.get('act_dim')}) do not match env {spec.name}")
    counts = meta.get("tier_counts")
    if not isinstance(counts, dict) or not all(isinstance(c, int) and c >= 0 for c in counts.values()):
        raise DatasetFormatError(f"{path}:1: tier_counts must map tiers to non-negative ints")
    n = sum(counts.values())
    body = len(lines) - 1
    if body < n:
        raise DatasetFormatError(f"{path}:{len(lines) + 1}: truncated file, expected {n} transitions, found {body}")
    if body > n:
        raise DatasetFormatError(f"{path}:{n + 2}: more transitions than tier_counts declares ({n})")

    s, a, r, s2, done, tier = [], [], [], [], [], []
    for lineno in range(2, n + 2):
        rec = parse(lineno)
        where = f"{path}:{lineno}"
        s.append(_vector(rec, "s", spec.obs_dim, where))
        a.append(_vector(rec, "a", spec.act_dim, where))
        s2.append(_vector(rec, "s_next", spec.obs_dim, where))
        rv = rec.get("r")
        if not isinstance(rv, (int, float)) or isinstance(rv, bool):
            raise DatasetFormatError(f"{where}: field 'r' must be a number")
        r.append(float(rv))
        if not isinstance(rec.get("done"), bool):
            raise DatasetFormatError(f"{where}: field 'done' must be a boolean")
        done.append(rec["done"])
        try:
            tier.append(BehaviorTier(rec.get("tier")).value)
        except ValueError:
            raise DatasetFormatError(f"{where}: unknown tier {rec.get('tier')!r}") from None

    ds = OfflineDataset(
        spec,
        np.array(s, dtype=np.float64).reshape(n, spec.obs_dim),
        np.array(a, dtype=np.float64).reshape(n, spec.act_dim),
        np.array(r, dtype=np.float64),
        np.array(s2, dtype=np.float64).reshape(n, spec.obs_dim),
        np.array(done, dtype=bool),
        np.array(tier, dtype=object),
        int(meta.get("seed", 0)),
    )
    if ds.tier_counts != {k: v for k, v in counts.items() if v}:
        raise DatasetFormatError(f"{path}:1: tier_counts {counts} disagree with transitions {ds.tier_counts}")
    return ds
