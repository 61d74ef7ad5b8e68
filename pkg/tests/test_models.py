import math

import numpy as np
import pytest

from condvar import autodiff as ad
from condvar import models as md
from condvar.models import (
    ModelSpec,
    forward,
    gradient,
    init_params,
    load_checkpoint,
    logistic_loss,
    param_count,
    save_checkpoint,
    softmax_cross_entropy,
)


def test_linear_forward_dot_product():
    spec = ModelSpec("linear", (2, 1))
    theta = np.array([1.0, -0.75, 0.0])  # w, then bias
    assert forward(spec, theta, np.array([1.0, 1.0])) == pytest.approx(0.25)


def test_zero_parameters_zero_logit():
    spec = ModelSpec("linear", (2, 1))
    theta = np.zeros(3)
    z = forward(spec, theta, np.array([3.0, -2.0]))
    assert z == 0.0
    assert 1.0 / (1.0 + math.exp(-z)) == 0.5


def test_zero_mlp_gives_zero_logit():
    spec = ModelSpec("mlp", (2, 3, 1))
    theta = np.zeros(param_count(spec))
    assert forward(spec, theta, np.array([1.0, 2.0])) == 0.0


def test_linear_logit_doubles_with_parameters():
    spec = ModelSpec("linear", (4, 1))
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(param_count(spec))
    x = rng.standard_normal(4)
    assert forward(spec, 2.0 * theta, x) == pytest.approx(2.0 * forward(spec, theta, x), rel=0, abs=1e-15)


def test_forward_dimension_mismatch():
    spec = ModelSpec("linear", (3, 1))
    with pytest.raises(ValueError):
        forward(spec, np.zeros(4), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        forward(spec, np.zeros(7), np.zeros((2, 3)))


def test_logistic_loss_values():
    assert logistic_loss(1, 0.0) == pytest.approx(math.log(2.0), rel=1e-12)
    assert logistic_loss(1, 50.0) <= 1e-20
    # direct evaluation of log(1 + exp(1))
    assert logistic_loss(-1, 1.0) == pytest.approx(math.log1p(math.exp(1.0)), rel=1e-12)


def test_logistic_loss_positive_and_monotone():
    rng = np.random.default_rng(1)
    z = np.sort(rng.uniform(-30, 30, 50))
    losses = logistic_loss(np.ones_like(z), z)
    assert np.all(losses > 0)
    assert np.all(np.diff(losses) <= 0)  # decreasing in y*z
    assert logistic_loss(-1, -700.0) > 0  # no overflow


def test_logistic_loss_rejects_bad_labels():
    with pytest.raises(ValueError):
        logistic_loss(0, 1.0)


def test_softmax_cross_entropy_values():
    assert softmax_cross_entropy(0, np.zeros(2)) == pytest.approx(math.log(2.0), rel=1e-12)
    assert softmax_cross_entropy(1, np.zeros(3)) == pytest.approx(math.log(3.0), rel=1e-12)
    # high-precision log-sum-exp: log(e^10 + e^-10) - 10 = log1p(e^-20)
    assert softmax_cross_entropy(0, np.array([10.0, -10.0])) == pytest.approx(
        math.log1p(math.exp(-20.0)), rel=1e-9)


def test_softmax_cross_entropy_label_range():
    with pytest.raises(ValueError):
        softmax_cross_entropy(2, np.zeros(2))


def test_gradient_logistic_at_zero():
    spec = ModelSpec("linear", (2, 1))
    x = np.array([1.0, 2.0])

    def objective(tv):
        logit = md.forward(spec, tv, x[None, :])
        return ad.vmean(logistic_loss(np.array([1.0]), logit))

    g = gradient(objective, np.zeros(3))
    assert np.allclose(g, [-0.5, -1.0, -0.5], atol=1e-12)


def test_gradient_of_squared_norm():
    theta = np.array([1.0, -2.0, 3.0])
    g = gradient(lambda tv: ad.vsum(tv * tv), theta)
    assert np.allclose(g, 2.0 * theta, atol=1e-14)


def test_gradient_rejects_non_var_objective():
    with pytest.raises(TypeError):
        gradient(lambda tv: float(np.sum(tv.value)), np.zeros(2))


def _finite_difference(objective, theta, h=1e-5):
    fd = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        up = float(objective(ad.Var(theta + e)).value)
        dn = float(objective(ad.Var(theta - e)).value)
        fd[i] = (up - dn) / (2.0 * h)
    return fd


@pytest.mark.parametrize("kind,sizes,activation", [
    ("linear", (3, 1), "tanh"),
    ("mlp", (3, 5, 1), "tanh"),
    ("mlp", (4, 6, 3, 1), "relu"),
    ("mlp", (3, 4, 3), "tanh"),  # 3-class output
])
def test_gradient_matches_finite_differences(kind, sizes, activation):
    rng = np.random.default_rng(hash((kind, sizes)) % 2**32)
    spec = ModelSpec(kind, sizes, activation)
    theta = init_params(spec, 5) + 0.1 * rng.standard_normal(param_count(spec))
    x = rng.standard_normal((12, sizes[0]))
    y = rng.integers(0, max(sizes[-1], 2), 12)

    def objective(tv):
        logits = md.forward(spec, tv, x)
        return ad.vmean(md.per_sample_loss(spec, logits, y))

    g = gradient(objective, theta)
    fd = _finite_difference(objective, theta)
    rel = np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)
    assert rel.max() < 1e-5


def test_param_flatten_round_trip():
    spec = ModelSpec("mlp", (3, 4, 2))
    theta = init_params(spec, 9)
    rebuilt = np.zeros_like(theta)
    for wsl, shape, bsl in md.param_slices(spec):
        rebuilt[wsl] = theta[wsl].reshape(shape).ravel()
        rebuilt[bsl] = theta[bsl]
    assert np.array_equal(rebuilt, theta)
    assert param_count(spec) == 3 * 4 + 4 + 4 * 2 + 2


def test_init_is_seeded_and_bias_free():
    spec = ModelSpec("mlp", (3, 4, 1))
    a = init_params(spec, 3)
    b = init_params(spec, 3)
    assert np.array_equal(a, b)
    for _w, _shape, bsl in md.param_slices(spec):
        assert np.all(a[bsl] == 0.0)
    a_limit = math.sqrt(6.0 / (3 + 4))
    wsl = md.param_slices(spec)[0][0]
    assert np.all(np.abs(a[wsl]) <= a_limit)


def test_checkpoint_round_trip(tmp_path):
    spec = ModelSpec("mlp", (2, 3, 1), "relu")
    theta = init_params(spec, 1)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, spec, theta, seed=1, step=42)
    spec2, theta2, seed, step = load_checkpoint(path)
    assert spec2 == spec
    assert np.array_equal(theta, theta2)
    assert (seed, step) == (1, 42)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("linear", (2, 3, 1))
    with pytest.raises(ValueError):
        ModelSpec("cnn", (2, 1))
    with pytest.raises(ValueError):
        ModelSpec("mlp", (2, 4, 1), activation="gelu")
