import copy

import numpy as np
import pytest

from a2po.dataset import MixRecipe, generate, sample_indices
from a2po.envs import ONE_STEP_JUMP, POINT_MASS
from a2po.evalsuite import evaluate
from a2po.trainer import (
    CheckpointError,
    TrainConfig,
    TrainingAborted,
    Variant,
    checkpoint_bytes,
    checkpoint_read,
    checkpoint_write,
    init_state,
    run,
    train_step,
)


@pytest.fixture(scope="module")
def jump_data():
    return generate(ONE_STEP_JUMP, MixRecipe.parse("random:0.9,medium:0.09,expert:0.01", 2000), seed=0)


@pytest.fixture(scope="module")
def pm_data():
    return generate(POINT_MASS, MixRecipe.parse("random:0.5,expert:0.5", 1000), seed=0)


def small(**kw):
    base = dict(total_steps=60, cvae_steps=20, batch_size=16, hidden=(8, 8), eval_every=0, seed=3)
    base.update(kw)
    base["cvae_steps"] = min(base["cvae_steps"], base["total_steps"])
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(total_steps=10, cvae_steps=11)
    with pytest.raises(ValueError):
        TrainConfig(tau=0.0)
    with pytest.raises(ValueError):
        TrainConfig(env="hopper")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig(gamma=0.5, hidden=[4, 4])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert TrainConfig().discount == 1.0 and TrainConfig(env="point_mass").discount == 0.99
    d = TrainConfig()
    assert (d.total_steps, d.cvae_steps, d.batch_size, d.eval_every, d.alpha_kl, d.alpha_q) == (20000, 5000, 256, 1000, 0.5, 1.0)


def test_variant_semantics():
    cfg = small()
    assert Variant.parse("a2po_fixed_xi").apply(cfg).advantage_mode == "fixed_one"
    assert Variant.parse("a2po_discrete_xi(0.2)").apply(cfg).mode.epsilon == 0.2
    assert Variant.parse("a2po_no_bc").apply(cfg).include_bc is False
    with pytest.raises(ValueError):
        Variant.parse("lapo")


def test_step_order(jump_data):
    phases = []
    state = init_state(small(), "a2po")
    train_step(state, jump_data, phases.append)
    assert phases == ["sample", "xi", "cvae", "critic", "actor", "target"]
    state.step = state.config.cvae_steps
    phases.clear()
    train_step(state, jump_data, phases.append)
    assert phases == ["sample", "xi", "critic", "actor", "target"]


def test_cvae_frozen_after_k(jump_data):
    cfg = small(total_steps=40, cvae_steps=15)
    state = init_state(cfg)
    run(cfg, jump_data, state=state, until=15)
    enc, dec = state.nets["enc"].copy(), state.nets["dec"].copy()
    res = run(cfg, jump_data, state=state)
    assert res.nets["enc"].bitwise_equal(enc) and res.nets["dec"].bitwise_equal(dec)
    assert all("cvae_loss" in m for m in run(cfg, jump_data).metrics[:15])


def test_k_zero_keeps_decoder_at_init(jump_data):
    cfg = small(cvae_steps=0, total_steps=10)
    init = init_state(cfg)
    res = run(cfg, jump_data)
    assert res.nets["dec"].bitwise_equal(init.nets["dec"])
    assert not any("cvae_loss" in m for m in res.metrics)


def test_tau_one_copies_targets(jump_data):
    cfg = small(tau=1.0, total_steps=5)
    state = init_state(cfg)
    for _ in range(5):
        train_step(state, jump_data)
        for q in ("q1", "q2"):
            assert state.nets[f"{q}_target"].flat.tobytes() == state.nets[q].flat.tobytes()


def test_targets_lag_online(pm_data):
    cfg = small(env="point_mass", total_steps=20)
    state = init_state(cfg)
    for _ in range(20):
        train_step(state, pm_data)
        for q in ("q1", "q2"):
            assert not np.array_equal(state.nets[f"{q}_target"].flat, state.nets[q].flat)


def test_determinism_and_resume(pm_data, tmp_path):
    cfg = small(env="point_mass", total_steps=200, cvae_steps=50, eval_every=50)
    a = run(cfg, pm_data)
    b = run(cfg, pm_data)
    assert a.metrics == b.metrics
    assert checkpoint_bytes(a.state) == checkpoint_bytes(b.state)

    part = run(cfg, pm_data, until=120)
    checkpoint_write(part.state, tmp_path / "mid.a2po")
    resumed = run(cfg, pm_data, state=checkpoint_read(tmp_path / "mid.a2po"))
    assert part.metrics + resumed.metrics == a.metrics
    assert checkpoint_bytes(resumed.state) == checkpoint_bytes(a.state)


def test_eval_does_not_perturb_training(pm_data):
    a = run(small(env="point_mass", eval_every=0), pm_data)
    b = run(small(env="point_mass", eval_every=7), pm_data)
    strip = lambda ms: [{k: v for k, v in m.items() if not k.startswith("eval")} for m in ms]
    assert strip(a.metrics) == strip(b.metrics)


def test_checkpoint_round_trip_and_errors(jump_data, tmp_path):
    res = run(small(), jump_data, "a2po_discrete_xi(0.3)")
    p = tmp_path / "c.a2po"
    checkpoint_write(res.state, p)
    back = checkpoint_read(p)
    assert str(back.variant) == "a2po_discrete_xi(0.3)" and back.step == res.state.step
    assert all(back.nets[k].bitwise_equal(v) for k, v in res.nets.items())
    assert back.rng.bit_generator.state == res.state.rng.bit_generator.state

    raw = p.read_bytes()
    (tmp_path / "magic.a2po").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic.a2po"):
        checkpoint_read(tmp_path / "magic.a2po")
    (tmp_path / "ver.a2po").write_bytes(raw[:4] + (9).to_bytes(4, "little") + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_read(tmp_path / "ver.a2po")
    (tmp_path / "trunc.a2po").write_bytes(raw[:-20])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_read(tmp_path / "trunc.a2po")
    (tmp_path / "extra.a2po").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_read(tmp_path / "extra.a2po")
    with pytest.raises(CheckpointError):
        checkpoint_read(tmp_path / "missing.a2po")


def test_nan_abort_within_one_step(jump_data):
    bad = jump_data.take(np.arange(50))
    bad.r[17] = np.inf
    cfg = small(batch_size=4, total_steps=500)
    state = init_state(cfg)
    while True:
        peek = copy.deepcopy(state.rng)
        hit = 17 in sample_indices(len(bad), cfg.batch_size, peek)
        step = state.step + 1
        if hit:
            with pytest.raises(TrainingAborted) as e:
                train_step(state, bad)
            assert e.value.step == step and e.value.loss_name == "q_loss"
            break
        train_step(state, bad)


def test_fixed_xi_metrics(jump_data):
    res = run(small(), jump_data, "a2po_fixed_xi")
    assert all(m["xi_min"] == m["xi_max"] == 1.0 for m in res.metrics)


def test_no_bc_has_zero_bc_term(jump_data):
    res = run(small(), jump_data, "a2po_no_bc")
    assert all(m["bc"] == 0.0 for m in res.metrics)
    assert all(np.isfinite(m["actor_loss"]) for m in res.metrics)


def test_variant_network_sets(jump_data):
    nets = lambda v: set(init_state(small(), v).nets)
    assert nets("a2po") == {"enc", "dec", "actor", "q1", "q2", "v", "q1_target", "q2_target"}
    assert nets("cvae_policy_only") == {"enc", "dec", "q1", "q2", "v", "q1_target", "q2_target"}
    assert nets("bc") == {"actor"}
    assert nets("td3_bc") == {"actor", "q1", "q2", "q1_target", "q2_target"}
    for v in ("cvae_policy_only", "bc", "td3_bc"):
        res = run(small(total_steps=10), jump_data, v)
        assert len(res.metrics) == 10
    assert "actor_loss" not in run(small(total_steps=3), jump_data, "cvae_policy_only").metrics[-1]


def test_bc_on_expert_data_imitates():
    data = generate(ONE_STEP_JUMP, MixRecipe.parse("expert:1", 2000), seed=1)
    cfg = TrainConfig(total_steps=1500, cvae_steps=0, batch_size=64, lr=3e-3, eval_every=0, seed=0)
    res = run(cfg, data, "bc")
    rep = evaluate(res.state.policy(), ONE_STEP_JUMP, 1.0, 100, np.random.default_rng(0))
    assert rep.mean_return >= 9.0


def test_cvae_loss_decreases(jump_data):
    cfg = small(total_steps=400, cvae_steps=400, batch_size=64, hidden=(32, 32))
    losses = np.array([m["cvae_loss"] for m in run(cfg, jump_data).metrics])
    assert losses[-40:].mean() < losses[:40].mean()


def test_dataset_env_mismatch(jump_data):
    with pytest.raises(ValueError):
        run(small(env="point_mass"), jump_data)
