"""Command-line driver: ``a2po {gen-data,train,eval,sweep,export-latent}``.

Settings come from an optional flat ``key = value`` config file (``#`` starts a
comment) and are overridden by flags. Output paths without an explicit
``--out`` go under the output root: ``$A2PO_OUT`` if set, else ``./runs``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import typing
from pathlib import Path

from a2po.approximator import NonFiniteError
from a2po.dataset import DatasetFormatError, MixRecipe, generate, read_dataset, write_dataset
from a2po.envs import get_env
from a2po.evalsuite import evaluate, export_latent_dump, xi_sweep
from a2po.seeding import stream
from a2po.trainer import (
    CheckpointError,
    TrainConfig,
    TrainingAborted,
    Variant,
    checkpoint_read,
    checkpoint_write,
    run,
)

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 2, 3
DEFAULT_ROOT = "runs"

# Config keys that are not TrainConfig fields.
EXTRA_KEYS = {"data", "variant", "seeds", "out", "mix", "tier", "total"}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_FLAG_FIELDS = [name for name in _TRAIN_FIELDS if name not in ("env", "seed")]


class UsageError(Exception):
    """Bad flags, config or inputs; maps to exit code 2."""


def output_root() -> Path:
    return Path(os.environ.get("A2PO_OUT") or DEFAULT_ROOT)


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name: str, text: str):
    """Typed value for TrainConfig field ``name`` from its text form."""
    hint = typing.get_type_hints(TrainConfig)[name]
    text = text.strip()
    if name == "hidden":
        return tuple(int(h) for h in text.split(",") if h.strip())
    if name == "gamma":
        return None if text.lower() in ("", "none", "env") else float(text)
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def parse_seeds(text: str) -> list[int]:
    """``"1,2,3"`` or a range ``"0-4"``."""
    text = str(text).strip()
    if "-" in text and "," not in text and not text.startswith("-"):
        lo, hi = (int(x) for x in text.split("-", 1))
        seeds = list(range(lo, hi + 1))
    else:
        seeds = [int(x) for x in text.split(",") if x.strip()]
    if not seeds:
        raise ValueError("seed list is empty")
    if any(s < 0 for s in seeds):
        raise ValueError("seeds must be non-negative")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seed list has duplicates")
    return seeds


def read_config(path) -> dict[str, str]:
    """Raw ``key -> value`` strings from a flat config file."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from e
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        if key not in _TRAIN_FIELDS and key not in EXTRA_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _settings(args) -> dict[str, str]:
    """Config file values overlaid with every flag that was given."""
    raw = read_config(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if key in ("command", "config", "func") or value is None:
            continue
        raw[key] = value if isinstance(value, str) else str(value)
    return raw


def _train_config(raw: dict[str, str], env: str, seed: int) -> TrainConfig:
    kw = {name: _convert(name, raw[name]) for name in _FLAG_FIELDS if name in raw}
    if "env" in raw and raw["env"] != env:
        raise UsageError(f"config env {raw['env']!r} does not match dataset env {env!r}")
    return TrainConfig(env=env, seed=seed, **kw)


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    raw = _settings(args)
    if "env" not in raw:
        raise UsageError("gen-data needs --env")
    spec = get_env(raw["env"])
    seed = int(raw.get("seed", "0"))
    if seed < 0:
        raise UsageError("seed must be non-negative")
    if ("mix" in raw) == ("tier" in raw):
        raise UsageError("give exactly one of --mix or --tier")
    if "total" not in raw:
        raise UsageError("gen-data needs --total")
    total = int(raw["total"])
    if "mix" in raw:
        recipe = MixRecipe.parse(raw["mix"], total)
        tag = "mix_" + "_".join(f"{t.value}{p:g}" for t, p in recipe.components)
    else:
        recipe = MixRecipe.parse(f"{raw['tier']}:1", total)
        tag = raw["tier"]
    out = Path(raw["out"]) if "out" in raw else output_root() / "data" / f"{spec.name}_{tag}_n{total}_s{seed}.jsonl"
    data = generate(spec, recipe, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out)
    print(_dumps({"path": str(out), "env": spec.name, "seed": seed, "tier_counts": data.tier_counts}))
    return EXIT_OK


def cmd_train(args) -> int:
    raw = _settings(args)
    if "data" not in raw:
        raise UsageError("train needs --data")
    data = read_dataset(raw["data"])
    variant = Variant.parse(raw.get("variant", "a2po"))
    seeds = parse_seeds(raw.get("seeds", "0"))
    configs = [_train_config(raw, data.spec.name, s) for s in seeds]
    base = Path(raw["out"]) if "out" in raw else output_root() / f"{data.spec.name}_{variant.kind}"

    for cfg in configs:
        run_dir = base / f"seed_{cfg.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = run_dir / "metrics.jsonl"
        with open(metrics_path, "w", encoding="utf-8", newline="\n") as f:
            try:
                res = run(cfg, data, variant, on_metrics=lambda m: f.write(_dumps(m) + "\n"), keep_metrics=False)
            except TrainingAborted as e:
                print(f"error: seed {cfg.seed}: training aborted at step {e.step}: non-finite {e.loss_name}", file=sys.stderr)
                return EXIT_ABORT
            except NonFiniteError as e:
                print(f"error: seed {cfg.seed}: {e}", file=sys.stderr)
                return EXIT_ABORT
        state = res.state
        checkpoint_write(state, run_dir / "checkpoint.a2po")
        rep = evaluate(
            state.policy(), state.env, 1.0, state.config.eval_episodes, stream(cfg.seed, "eval", state.step)
        )
        (run_dir / "eval.json").write_text(_dumps(rep.to_json(str(variant), cfg.seed)) + "\n", encoding="utf-8")
        print(_dumps({"run_dir": str(run_dir), **rep.to_json(str(variant), cfg.seed)}))
    return EXIT_OK


def _load(args):
    state = checkpoint_read(args.checkpoint)
    seed = state.config.seed if args.seed is None else args.seed
    if seed < 0:
        raise UsageError("seed must be non-negative")
    return state, seed


def _emit(payload, out) -> None:
    text = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_eval(args) -> int:
    state, seed = _load(args)
    rep = evaluate(state.policy(), state.env, args.xi, args.episodes, stream(seed, "eval", state.step))
    _emit(rep.to_json(str(state.variant), seed), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    state, seed = _load(args)
    xis = [float(x) for x in args.xis.split(",") if x.strip()]
    if not xis or any(not -1.0 <= x <= 1.0 for x in xis):
        raise UsageError("--xis must be a non-empty list of values in [-1, 1]")
    reps = xi_sweep(state.policy(), state.env, xis, args.episodes, stream(seed, "eval", state.step))
    _emit([r.to_json(str(state.variant), seed) for r in reps], args.out)
    return EXIT_OK


def cmd_export_latent(args) -> int:
    state, seed = _load(args)
    policy = state.policy()
    if not hasattr(policy, "latent"):
        raise UsageError(f"variant {state.variant} has no latent actor to export")
    if args.n < 3:
        raise UsageError("--n must be at least 3")
    out = Path(args.out) if args.out else output_root() / "latent" / f"{state.env.name}_{state.variant.kind}_s{seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    dump = export_latent_dump(policy, state.env, args.n, stream(seed, "eval", state.step, 1), out)
    print(_dumps({"path": str(out), "rows": int(dump.xi.size), "degenerate": dump.pca.degenerate}))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="a2po", description="Advantage-aware offline RL on toy environments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="collect a scripted or mixed offline dataset")
    g.add_argument("--config")
    g.add_argument("--env")
    g.add_argument("--mix", help="recipe such as random:0.5,expert:0.5")
    g.add_argument("--tier", choices=["random", "medium", "expert"])
    g.add_argument("--total", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output .jsonl path")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one run per seed")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset .jsonl")
    t.add_argument("--env", help="must match the dataset")
    t.add_argument("--variant")
    t.add_argument("--seeds", help="comma list or range, e.g. 1,2,3 or 0-4")
    t.add_argument("--out", help="directory that receives seed_<k>/ run directories")
    for name in _FLAG_FIELDS:
        t.add_argument("--" + name.replace("_", "-"), dest=name)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "evaluate a checkpoint at one advantage input"),
        ("sweep", cmd_sweep, "evaluate a checkpoint across advantage inputs"),
        ("export-latent", cmd_export_latent, "write the latent/return CSV of a checkpoint"),
    ):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--seed", type=int, help="evaluation seed (default: the run's seed)")
        c.add_argument("--out")
        if name == "eval":
            c.add_argument("--xi", type=float, default=1.0)
        if name == "sweep":
            c.add_argument("--xis", default="-1,0,1")
        if name == "export-latent":
            c.add_argument("--n", type=int, default=500)
        else:
            c.add_argument("--episodes", type=int, default=10)
        c.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError, DatasetFormatError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
