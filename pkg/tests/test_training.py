import math

import numpy as np
import pytest

from fpcrf.bench import synthetic_patches
from fpcrf.config import CrfParams, potts
from fpcrf.training import (
    LogisticUnary,
    Model,
    Patch,
    TrainConfig,
    check_gradients,
    loss_and_gradients,
    nll_loss,
    sgd_step,
    train,
)

KINDS = ("a", "s", "fd", "fs", "fc")


def random_patch(rng, size=6, classes=3, dims=3):
    feats = rng.normal(size=(size, size, dims))
    return Patch(feats, rng.integers(0, classes, size=(size, size)),
                 unary=rng.normal(size=(size, size, classes)),
                 image_rgb=rng.random((size, size, 3)))


def random_model(rng, kind, classes=3, radius=3, iterations=2):
    params = CrfParams(
        kinds=(kind,), weights=rng.uniform(0.3, 1.5, size=1),
        bandwidths={"alpha": rng.uniform(1, 3), "beta": rng.uniform(0.2, 1),
                    "gamma": rng.uniform(1, 3), "delta": rng.uniform(0.7, 2),
                    "zeta": rng.uniform(0.7, 2), "eta": rng.uniform(1, 3)},
        compatibility=rng.uniform(-0.5, 1.5, size=(classes, classes)),
        filter_radius=radius, iterations=iterations, tolerance=0.0)
    return Model(params)


def test_nll_examples():
    truth = np.array([[0, 3], [10, 5]])
    assert nll_loss(np.full((2, 2, 11), 1 / 11), truth) == pytest.approx(2.397895, abs=1e-6)
    assert nll_loss(np.eye(11)[truth], truth) == 0.0
    q = np.zeros((1, 1, 2))
    q[..., 1] = 1.0
    loss = nll_loss(q, np.array([[0]]))
    assert math.isfinite(loss) and loss <= -math.log(1e-12) + 1e-9


def test_zero_weights_kill_compatibility_gradient():
    rng = np.random.default_rng(0)
    model = random_model(rng, "fd")
    model.params.weights[:] = 0.0
    _, g = loss_and_gradients([random_patch(rng)], model)
    assert not g["compatibility"].any()


def test_single_pixel_zero_pairwise_gradients():
    rng = np.random.default_rng(1)
    model = Model(CrfParams(kinds=KINDS, compatibility=potts(3), filter_radius=3,
                            iterations=2))
    _, g = loss_and_gradients([random_patch(rng, size=1)], model)
    assert not g["weights"].any()
    assert not any(g["bandwidths"].values())
    assert not g["compatibility"].any()


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(3))
def test_gradient_check(kind, seed):
    rng = np.random.default_rng(100 + seed)
    report = check_gradients(random_patch(rng), random_model(rng, kind))
    assert report.max_relative_error < 1e-3, report.rows()


def test_gradient_check_unary_model():
    rng = np.random.default_rng(4)
    patch = random_patch(rng)
    patch.unary = None
    model = random_model(rng, "fd")
    model.unary = LogisticUnary(rng.normal(size=(3, 3)), rng.normal(size=3))
    config = TrainConfig(trainable=("weights", "unary"))
    report = check_gradients(patch, model, config)
    assert report.max_relative_error < 1e-3
    assert {n.split("[")[0] for n in report.names} == {"w", "unary_weight", "unary_bias"}


def test_frozen_group_omitted():
    rng = np.random.default_rng(2)
    config = TrainConfig(trainable=("weights", "compatibility"))
    report = check_gradients(random_patch(rng), random_model(rng, "fs"), config)
    assert not any(n.startswith("log_theta") for n in report.names)
    _, g = loss_and_gradients([random_patch(rng)], random_model(rng, "fs"), config)
    assert set(g) == {"weights", "compatibility"}


def test_single_pixel_report_zero():
    rng = np.random.default_rng(3)
    report = check_gradients(random_patch(rng, size=1), random_model(rng, "fd"))
    for name, a, f, _ in report.rows():
        if not name.startswith("unary"):
            assert a == 0.0 and f == 0.0


def test_sgd_step():
    model = Model(CrfParams(kinds=("fd",), weights=[1.0], compatibility=potts(2)))
    out = sgd_step(model, {"weights": np.array([2.0])}, 0.1)
    assert out.params.weights[0] == pytest.approx(0.8)
    same = sgd_step(model, {"weights": np.zeros(1), "compatibility": np.zeros((2, 2)),
                            "bandwidths": {"delta": 0.0}}, 0.1)
    assert np.array_equal(same.params.weights, model.params.weights)
    assert same.params.bandwidths == model.params.bandwidths
    big = sgd_step(model, {"bandwidths": {"delta": 1e3}}, 1.0)
    assert big.params.bandwidths["delta"] > 0
    neg = sgd_step(model, {"weights": np.array([100.0])}, 1.0)
    assert neg.params.weights[0] == 0.0


def _small_dataset(count=6, size=24):
    return synthetic_patches(3, count, size=size, noise=0.25)


def _fresh_model(dims):
    return Model(CrfParams(kinds=("fd",), compatibility=potts(2), filter_radius=3,
                           iterations=3), LogisticUnary.zeros(dims, 2))


def test_zero_epochs():
    data = _small_dataset(2)
    model = _fresh_model(data[0].features.shape[-1])
    out, history = train(data, model, TrainConfig(epochs=0))
    assert history == []
    assert np.array_equal(out.params.weights, model.params.weights)


def test_training_reduces_loss():
    data = synthetic_patches(3, 20, size=32, noise=0.25)
    config = TrainConfig(learning_rate=0.5, epochs=30, batch_size=4, seed=1,
                         trainable=("weights", "bandwidths", "compatibility", "unary"))
    _, history = train(data, _fresh_model(data[0].features.shape[-1]), config)
    assert len(history) == 30
    assert history[-1] < history[0]


def test_same_seed_same_history():
    data = _small_dataset()
    config = TrainConfig(learning_rate=0.3, epochs=3, batch_size=2, seed=7,
                         trainable=("weights", "bandwidths", "compatibility", "unary"))
    m1, h1 = train(data, _fresh_model(8), config)
    m2, h2 = train(data, _fresh_model(8), config)
    assert h1 == h2
    assert np.array_equal(m1.params.compatibility, m2.params.compatibility)
    assert np.array_equal(m1.unary.weight, m2.unary.weight)


def test_threads_do_not_change_results():
    data = _small_dataset()
    base = dict(learning_rate=0.3, epochs=2, batch_size=3, seed=2,
                trainable=("weights", "bandwidths", "compatibility", "unary"))
    _, h1 = train(data, _fresh_model(8), TrainConfig(threads=1, **base))
    _, h4 = train(data, _fresh_model(8), TrainConfig(threads=4, **base))
    assert h1 == h4


def test_empty_dataset():
    with pytest.raises(ValueError):
        train([], _fresh_model(8), TrainConfig())
