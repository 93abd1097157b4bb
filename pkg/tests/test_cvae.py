import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gradcheck import fd_grad, jitter, max_rel_error
from a2po.approximator import ParamSet, ShapeError
from a2po.cvae import CvaeNets, GaussianHead, condition, kl_to_standard_normal, reparameterize
from a2po.envs import ONE_STEP_JUMP, POINT_MASS


def _zero(spec):
    return ParamSet.from_flat(np.zeros(spec.n_params))


def kl_quadrature(mean, log_std):
    total = 0.0
    for m, ls in zip(mean, log_std):
        q = stats.norm(m, np.exp(ls))
        f = lambda z: q.pdf(z) * (q.logpdf(z) - stats.norm.logpdf(z))
        sd = np.exp(ls)
        total += integrate.quad(f, m - 8 * sd, m + 8 * sd, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
    return total


def test_kl_closed_form_values():
    assert kl_to_standard_normal(GaussianHead(np.zeros(3), np.zeros(3))) == 0.0
    assert kl_to_standard_normal(GaussianHead(np.array([1.0]), np.array([0.0]))) == 0.5


def test_kl_matches_quadrature():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = rng.integers(1, 4)
        mean, ls = rng.normal(size=d), rng.uniform(-1.5, 1.0, size=d)
        assert abs(kl_to_standard_normal(GaussianHead(mean, ls)) - kl_quadrature(mean, ls)) < 1e-6


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-4, 4)), min_size=1, max_size=4))
@settings(max_examples=200, deadline=None)
def test_kl_non_negative(pairs):
    mean, ls = np.array(pairs).T
    kl = kl_to_standard_normal(GaussianHead(mean, ls))
    assert kl >= 0.0
    if np.all(mean == 0) and np.all(ls == 0):
        assert kl == 0.0


def test_reparameterize():
    h = GaussianHead(np.array([0.5, -1.0]), np.array([0.0, 0.0]))
    np.testing.assert_array_equal(reparameterize(h, np.zeros(2)), h.mean)
    np.testing.assert_array_equal(reparameterize(h, np.array([1.0, 2.0])), [1.5, 1.0])
    z = reparameterize(GaussianHead(np.array([0.0]), np.array([np.log(2.0)])), np.array([1.0]))
    assert z[0] == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(ShapeError):
        reparameterize(h, np.zeros(3))


def test_condition_layout():
    np.testing.assert_array_equal(condition(np.array([1.0, 2.0]), 0.5), [1.0, 2.0, 0.5])
    c = condition(np.ones((3, 2)), np.array([-1.0, 0.0, 1.0]))
    assert c.shape == (3, 3) and c[:, 2].tolist() == [-1.0, 0.0, 1.0]


def test_zero_encoder_is_unit_gaussian_and_clamp():
    cv = CvaeNets.build(POINT_MASS, (8,))
    h = cv.encode(_zero(cv.enc), np.array([0.3, -0.2]), np.ones(5))
    assert not h.mean.any() and not h.log_std.any()
    rng = np.random.default_rng(0)
    big = ParamSet.from_flat(50 * rng.normal(size=cv.enc.n_params))
    h = cv.encode(big, rng.normal(size=(20, 2)), rng.normal(size=(20, 5)))
    assert np.all(np.abs(h.log_std) <= 4.0)
    h2 = cv.encode(big, np.zeros((1, 2)), np.zeros((1, 5)))
    h3 = cv.encode(big, np.zeros((1, 2)), np.zeros((1, 5)))
    assert h2.mean.tobytes() == h3.mean.tobytes()
    with pytest.raises(ShapeError):
        cv.encode(big, np.zeros(3), np.zeros(5))


def test_decode_bounds_and_hand_values():
    cv = CvaeNets.build(ONE_STEP_JUMP, (4,))
    assert cv.latent_dim == 2
    np.testing.assert_array_equal(cv.decode(_zero(cv.dec), np.zeros(2), np.zeros(2)), [0.0])
    # only the output bias is non-zero, so the pre-activation is exactly 0.1
    flat = np.zeros(cv.dec.n_params)
    flat[-1] = 0.1
    a = cv.decode(ParamSet.from_flat(flat), np.zeros(2), np.zeros(2))
    assert a[0] == pytest.approx(10 * np.tanh(0.1)) and a[0] == pytest.approx(0.9967, abs=1e-4)
    rng = np.random.default_rng(1)
    wild = ParamSet.from_flat(30 * rng.normal(size=cv.dec.n_params))
    out = cv.decode(wild, 5 * rng.normal(size=(100, 2)), rng.normal(size=(100, 2)))
    assert np.all(np.abs(out) <= 10.0)


def _batch(env, n, rng):
    s = rng.normal(size=(n, env.obs_dim))
    a = rng.uniform(-0.9, 0.9, size=(n, env.act_dim))
    xi = rng.uniform(-1, 1, size=n)
    return s, a, xi


@pytest.mark.parametrize("env", [ONE_STEP_JUMP, POINT_MASS])
def test_cvae_loss_gradients(env):
    rng = np.random.default_rng(2)
    cv = CvaeNets.build(env, (6, 5))
    for _ in range(10):
        enc, dec = (jitter(p, rng) for p in cv.init(rng))
        s, a, xi = _batch(env, 4, rng)
        noise = rng.normal(size=(4, cv.latent_dim))
        _, ge, gd, _ = cv.loss(enc, dec, s, a, xi, 0.5, noise=noise)
        fe = fd_grad(lambda f: cv.loss(ParamSet.from_flat(f), dec, s, a, xi, 0.5, noise=noise)[0], enc.flat)
        fdd = fd_grad(lambda f: cv.loss(enc, ParamSet.from_flat(f), s, a, xi, 0.5, noise=noise)[0], dec.flat)
        assert max_rel_error(ge, fe) < 1e-4
        assert max_rel_error(gd, fdd) < 1e-4


def test_cvae_loss_terms():
    cv = CvaeNets.build(ONE_STEP_JUMP, (4,))
    rng = np.random.default_rng(3)
    s, a, xi = _batch(ONE_STEP_JUMP, 5, rng)
    # zero nets: unit head, decoder outputs 0, so dataset action 0 is reconstructed
    loss, *_ = cv.loss(_zero(cv.enc), _zero(cv.dec), s, np.zeros((5, 1)), xi, 0.5, noise=rng.normal(size=(5, 2)))
    assert loss == 0.0
    enc, dec = cv.init(rng)
    noise = rng.normal(size=(5, 2))
    loss0, _, _, info = cv.loss(enc, dec, s, a, xi, 0.0, noise=noise)
    assert loss0 == pytest.approx(info["recon"])
    head = cv._encode(enc, a, condition(s, xi))[0]
    recon = cv.decode_unit(dec, reparameterize(head, noise), condition(s, xi))[0]
    assert loss0 == pytest.approx(np.mean(np.sum((recon - a) ** 2, axis=1)))
    loss1, _, _, info1 = cv.loss(enc, dec, s, a, xi, 0.5, noise=noise)
    assert loss1 == pytest.approx(info1["recon"] + 0.5 * info1["kl"])


def test_cvae_loss_rejects_bad_batches():
    cv = CvaeNets.build(ONE_STEP_JUMP, (4,))
    enc, dec = cv.init(np.random.default_rng(0))
    with pytest.raises(ValueError):
        cv.loss(enc, dec, np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        cv.loss(enc, dec, np.zeros((1, 1)), np.zeros((1, 1)), np.array([1.5]), rng=np.random.default_rng(0))
