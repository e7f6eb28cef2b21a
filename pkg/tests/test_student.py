import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pipeline import flatten, pipeline_loss, tiny_problem
from stdistill import tensor as tn
from stdistill.student import (
    LatentDist,
    decode,
    encode,
    kl_divergence,
    reparameterize,
)
from stdistill.tensor import DimensionError, Tensor, grad_check


def layer(w, b):
    return tn.parameter(np.asarray(w, float)), tn.parameter(np.asarray(b, float))


def test_encode_zero_weights():
    fused = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4, 5)))
    layers = [layer(np.zeros((15, 6)), np.zeros(6)), layer(np.zeros((6, 4)), np.zeros(4))]
    dist = encode(fused, layers)
    assert dist.mu.shape == (2, 4, 2)
    assert not dist.mu.data.any() and not dist.logvar.data.any()


def test_encode_identical_nodes_share_latent():
    rng = np.random.default_rng(1)
    fused = rng.normal(size=(1, 2, 3, 4))
    fused[:, :, 2] = fused[:, :, 0]
    layers = [layer(rng.normal(size=(8, 6)), rng.normal(size=6)), layer(rng.normal(size=(6, 4)), rng.normal(size=4))]
    dist = encode(Tensor(fused), layers)
    assert np.array_equal(dist.mu.data[0, 0], dist.mu.data[0, 2])
    assert np.array_equal(dist.logvar.data[0, 0], dist.logvar.data[0, 2])


def test_encode_single_linear_layer_by_hand():
    # one node, T=1, two fused channels -> d_z = 1
    w = np.array([[1.0, -2.0], [0.5, 3.0]])
    b = np.array([0.1, -0.2])
    dist = encode(Tensor([[[[2.0, 4.0]]]]), [layer(w, b)])
    assert dist.mu.data[0, 0, 0] == pytest.approx(2.0 * 1.0 + 4.0 * 0.5 + 0.1)
    assert dist.logvar.data[0, 0, 0] == pytest.approx(2.0 * -2.0 + 4.0 * 3.0 - 0.2)


def test_encode_clamps_logvar():
    dist = encode(Tensor([[[[1.0]]]]), [layer([[0.0, 50.0]], [0.0, 0.0])])
    assert dist.logvar.data.item() == 10.0


def test_encode_shape_mismatch():
    with pytest.raises(DimensionError):
        encode(Tensor(np.zeros((1, 2, 3, 4))), [layer(np.zeros((7, 2)), np.zeros(2))])


def test_reparameterize_cases():
    mu = Tensor([[[0.3, -1.0]]])
    dist = LatentDist(mu, Tensor([[[0.0, 0.0]]]))
    assert np.array_equal(reparameterize(dist, np.zeros((1, 1, 2)), train=True).data, mu.data)
    assert reparameterize(dist, np.ones((1, 1, 2)), train=False) is mu
    unit = LatentDist(Tensor([[[0.0]]]), Tensor([[[0.0]]]))
    assert reparameterize(unit, np.array([[[1.5]]]), train=True).data.item() == 1.5
    tight = LatentDist(Tensor([[[2.0]]]), Tensor([[[-10.0]]]))
    z = reparameterize(tight, np.array([[[3.0]]]), train=True).data.item()
    assert abs(z - 2.0) <= np.exp(-5.0) * 3.0 + 1e-15


def test_decode_zero_is_bias():
    z = Tensor(np.random.default_rng(2).normal(size=(2, 3, 4)))
    bias = np.arange(6, dtype=float)
    out = decode(z, [layer(np.zeros((4, 6)), bias)], horizon=3, num_features=2)
    assert out.shape == (2, 3, 3, 2)
    assert np.array_equal(out.data[0, :, 1, :], bias.reshape(3, 2))


def test_decode_scalar_latent_by_hand():
    w, b = 1.7, -0.4
    z = np.array([[[0.5], [-2.0]]])
    out = decode(Tensor(z), [layer([[w]], [b])], horizon=1, num_features=1)
    assert np.allclose(out.data[0, 0, :, 0], w * z[0, :, 0] + b, atol=1e-15)


def test_grad_check_encode_reparam_decode():
    rng = np.random.default_rng(3)
    enc = [layer(rng.normal(size=(6, 5)), rng.normal(size=5)), layer(rng.normal(size=(5, 4)) * 0.3, rng.normal(size=4) * 0.3)]
    dec = [layer(rng.normal(size=(2, 3)), rng.normal(size=3))]
    eps = rng.standard_normal((1, 2, 2))

    def f(x):
        dist = encode(x, enc)
        return tn.sum(decode(reparameterize(dist, eps, train=True), dec, horizon=3, num_features=1))

    assert grad_check(f, rng.normal(size=(1, 2, 2, 3))) < 1e-5


@pytest.mark.parametrize("mu, logvar, expected", [(0.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.0, 1.0, 0.5 * (np.e - 2.0))])
def test_kl_closed_form_points(mu, logvar, expected):
    kl = kl_divergence(LatentDist(Tensor([mu]), Tensor([logvar]))).item()
    assert kl == pytest.approx(expected, abs=1e-15)


def monte_carlo_kl(mu, sigma, n=1_000_000, seed=0):
    z = np.random.default_rng(seed).normal(mu, sigma, size=n)
    log_q = -np.log(sigma) - 0.5 * ((z - mu) / sigma) ** 2
    log_p = -0.5 * z ** 2
    return float(np.mean(log_q - log_p))


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(7)
    for _ in range(5):
        mu, sigma = rng.uniform(-2, 2), rng.uniform(0.5, 2.0)
        kl = kl_divergence(LatentDist(Tensor([mu]), Tensor([2 * np.log(sigma)]))).item()
        assert kl == pytest.approx(monte_carlo_kl(mu, sigma), abs=1e-2)


@given(st.floats(-20, 20), st.floats(-10, 10))
@settings(max_examples=200)
def test_kl_non_negative(mu, logvar):
    kl = kl_divergence(LatentDist(Tensor([mu]), Tensor([logvar]))).item()
    assert kl >= 0.0
    if mu != 0.0 or logvar != 0.0:
        assert kl > 0.0 or abs(mu) < 1e-7 and abs(logvar) < 1e-7


def test_eval_forward_consumes_no_rng():
    model, inp = tiny_problem(seed=4)
    state = np.random.get_state()[1].copy()
    a = model.predict(inp["x"], inp["tod"], inp["dow"], inp["start"])
    b = model.predict(inp["x"], inp["tod"], inp["dow"], inp["start"])
    assert a.tobytes() == b.tobytes()
    assert np.array_equal(np.random.get_state()[1], state)


def test_full_pipeline_gradient():
    model, inp = tiny_problem(seed=5)
    f = pipeline_loss(model, inp)
    _, _, theta = flatten(model)
    assert grad_check(f, theta) < 1e-4


def test_model_gradients_reach_all_parameters():
    model, inp = tiny_problem(seed=6)
    y_hat, dist = model.forward(inp["x"], inp["tod"], inp["dow"], inp["start"], eps=inp["eps"], train=True)
    loss = tn.add(tn.mean(tn.abs(tn.sub(y_hat, inp["y"]))), kl_divergence(dist))
    loss.backward()
    for name, p in model.named_parameters().items():
        assert p.grad is not None and np.linalg.norm(p.grad) > 0, name
