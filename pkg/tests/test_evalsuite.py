import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a2po.dataset import MixRecipe, generate
from a2po.envs import ONE_STEP_JUMP, POINT_MASS, reference_returns
from a2po.evalsuite import (
    EvalReport,
    ScriptedAgent,
    aggregate_seeds,
    evaluate,
    export_latent_dump,
    pca2,
    xi_sweep,
)
from a2po.trainer import TrainConfig, run


class ConstantAgent:
    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)

    def act(self, obs, xi):
        return np.tile(self.a, (np.atleast_2d(obs).shape[0], 1))


class XiAgent:
    """Moves toward the goal with gain (xi + 1) / 2; also exposes a latent."""

    def act(self, obs, xi):
        obs = np.atleast_2d(obs)
        xi = np.broadcast_to(np.asarray(xi, dtype=float), (obs.shape[0],))
        return np.clip(2 * obs[:, 2:4] * ((xi + 1) / 2)[:, None], -1, 1)

    def latent(self, obs, xi):
        xi = np.broadcast_to(np.asarray(xi, dtype=float), (np.atleast_2d(obs).shape[0],))
        return np.stack([xi, 0.5 * xi + 0.01 * np.sin(7 * xi), xi**2, np.cos(xi)], axis=1)


def test_xi_ignored_gives_identical_reports():
    agent = ScriptedAgent(POINT_MASS, "medium", None)
    reps = []
    for xi in (-1.0, 1.0):
        agent.rng = np.random.default_rng(3)
        reps.append(evaluate(agent, POINT_MASS, xi, 20, np.random.default_rng(4)))
    assert reps[0].mean_return == reps[1].mean_return and reps[0].std_return == reps[1].std_return


def test_single_episode_std_zero_and_bounds():
    rep = evaluate(ConstantAgent([0.5, 0.5]), POINT_MASS, 1.0, 1, np.random.default_rng(0))
    assert rep.std_return == 0.0 and rep.episodes == 1
    with pytest.raises(ValueError):
        evaluate(ConstantAgent([0.0]), ONE_STEP_JUMP, 1.5, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        evaluate(ConstantAgent([0.0]), ONE_STEP_JUMP, 1.0, 0, np.random.default_rng(0))


@pytest.mark.parametrize("env", [ONE_STEP_JUMP, POINT_MASS])
def test_scripted_expert_scores_about_100(env):
    rep = evaluate(ScriptedAgent(env, "expert", np.random.default_rng(1)), env, 1.0, 2000, np.random.default_rng(2))
    assert abs(rep.normalized_score - 100.0) < 2.0


def test_report_json():
    rep = EvalReport(1.0, 0.5, 40.0, 10, 1.0)
    assert rep.to_json("a2po", 3) == {"variant": "a2po", "seed": 3, "xi": 1.0, "mean": 1.0, "std": 0.5,
                                      "norm_score": 40.0, "episodes": 10}


def test_sweep_shares_start_states():
    reps = xi_sweep(ConstantAgent([0.3, -0.2]), POINT_MASS, n_episodes=15, rng=np.random.default_rng(0))
    assert len(reps) == 3 and [r.xi_used for r in reps] == [-1.0, 0.0, 1.0]
    assert reps[0].mean_return == reps[1].mean_return == reps[2].mean_return
    ordered = xi_sweep(XiAgent(), POINT_MASS, n_episodes=15, rng=np.random.default_rng(0))
    assert ordered[0].mean_return < ordered[1].mean_return < ordered[2].mean_return


def test_aggregate_seeds():
    same = [EvalReport(3.0, 1.0, 10.0, 5, 1.0)] * 3
    assert aggregate_seeds(same) == (3.0, 0.0)
    two = [EvalReport(0.0, 0, 0, 1, 1.0), EvalReport(100.0, 0, 0, 1, 1.0)]
    assert aggregate_seeds(two) == (50.0, 50.0)
    with pytest.raises(ValueError):
        aggregate_seeds(two[:1])


def test_aggregate_seed_spread_is_small():
    env = POINT_MASS
    reps = [evaluate(ScriptedAgent(env, "medium", np.random.default_rng(s)), env, 1.0, 10, np.random.default_rng(100 + s))
            for s in range(5)]
    _, std = aggregate_seeds(reps)
    single = np.mean([r.std_return for r in reps])
    assert std < 3 * single / np.sqrt(10)


def test_pca_axis_aligned_recovers_data():
    # a cross of points: exactly zero cross-covariance, wider along x
    x = np.array([[-5.0, 0.0], [5.0, 0.0], [0.0, -1.0], [0.0, 1.0], [3.0, 0.0], [-3.0, 0.0]]) + [1.0, 2.0]
    res = pca2(x)
    np.testing.assert_allclose(res.components, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.abs(res.projected), np.abs(x - x.mean(0)), atol=1e-12)
    assert not res.degenerate


def test_pca_matches_eigh_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a = rng.normal(size=(5, 5))
        cov = a @ a.T + np.diag([4.0, 2.0, 0, 0, 0])
        x = rng.multivariate_normal(np.zeros(5), cov, size=2000)
        res = pca2(x)
        xc = x - x.mean(0)
        w, v = np.linalg.eigh(xc.T @ xc / len(x))
        top = v[:, ::-1][:, :2].T
        for k in range(2):
            assert abs(res.components[k] @ top[k]) > 0.99
        np.testing.assert_allclose(res.variances, w[::-1][:2], rtol=1e-6)


@given(st.integers(0, 2**31), st.integers(3, 40), st.integers(2, 6))
@settings(max_examples=60, deadline=None)
def test_pca_invariants(seed, n, d):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) * rng.uniform(0.1, 5, size=d)
    res = pca2(x)
    c = res.components
    assert abs(c[0] @ c[1]) < 1e-8
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), 1.0, atol=1e-8)
    for row in c:
        nz = row[np.abs(row) > 1e-12]
        assert nz[0] > 0
    total = np.trace(np.cov(x.T, bias=True))
    assert np.sum(np.var(res.projected, axis=0)) <= total * (1 + 1e-9)
    assert res.projected.shape == (n, 2)


def test_pca_degenerate_and_bad_input():
    t = np.linspace(0, 1, 10)
    assert pca2(np.stack([t, 2 * t, -t], axis=1)).degenerate
    with pytest.raises(ValueError):
        pca2(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        pca2(np.zeros((5, 1)))


def test_latent_dump_file(tmp_path):
    path = tmp_path / "lat.csv"
    dump = export_latent_dump(XiAgent(), POINT_MASS, 50, np.random.default_rng(0), path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["xi", "z_0", "z_1", "z_2", "z_3", "p_0", "p_1", "ret"]
    assert len(rows) == 51
    xi = np.array([float(r[0]) for r in rows[1:]])
    assert np.all(np.abs(xi) <= 1.0)
    assert xi.tobytes() == dump.xi.tobytes()
    with pytest.raises(OSError, match="nope"):
        export_latent_dump(XiAgent(), POINT_MASS, 5, np.random.default_rng(0), tmp_path / "nope" / "x.csv")


def test_evaluation_leaves_parameters_untouched():
    data = generate(POINT_MASS, MixRecipe.parse("random:0.5,expert:0.5", 500), seed=0)
    res = run(TrainConfig(env="point_mass", total_steps=20, cvae_steps=10, batch_size=16, hidden=(8,), eval_every=0), data)
    before = {k: v.copy() for k, v in res.nets.items()}
    pol = res.state.policy()
    xi_sweep(pol, POINT_MASS, n_episodes=3, rng=np.random.default_rng(0))
    export_latent_dump(pol, POINT_MASS, 10, np.random.default_rng(0), "/dev/null")
    assert all(res.nets[k].bitwise_equal(v) for k, v in before.items())
