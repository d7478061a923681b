import numpy as np
import pytest

from cfel.datagen import DeviceDataset, make_classification
from cfel.errors import ConfigError
from cfel.numerics import (LogisticModel, MLPModel, QuadraticModel, full_gradient, sgd_step,
                           stoch_gradient)


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def classification_device(n, n_features, n_classes, seed):
    pool, _ = make_classification(n, 1, n_features, n_classes, seed)
    return DeviceDataset(pool.features, pool.labels, 0, n_classes)


def quadratic_device(targets):
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    return DeviceDataset(t, np.zeros(len(t), dtype=int), 0)


def test_quadratic_gradient_zero_at_target():
    b = np.array([0.3, -1.2, 2.0])
    np.testing.assert_array_equal(full_gradient(QuadraticModel(3), b, quadratic_device(b)), np.zeros(3))


def test_quadratic_gradient_is_x_minus_b():
    g = full_gradient(QuadraticModel(2), np.zeros(2), quadratic_device([1.0, 0.0]))
    np.testing.assert_array_equal(g, [-1.0, 0.0])


def test_logistic_gradient_matches_finite_differences_at_zero():
    model = LogisticModel(4, 3)
    data = classification_device(20, 4, 3, seed=5)
    x = np.zeros(model.dim)
    fd = central_diff(lambda p: model.loss(p, data.features, data.labels), x)
    np.testing.assert_allclose(full_gradient(model, x, data), fd, rtol=1e-6, atol=1e-10)


@pytest.mark.parametrize("kind", ["quadratic", "logistic", "mlp"])
def test_gradients_match_finite_differences_on_random_points(kind):
    rng = np.random.default_rng(11)
    for trial in range(50):
        if kind == "quadratic":
            model = QuadraticModel(5)
            data = quadratic_device(rng.standard_normal((7, 5)))
        elif kind == "logistic":
            model = LogisticModel(3, 4)
            data = classification_device(15, 3, 4, seed=trial)
        else:
            model = MLPModel(3, 5, 3)
            data = classification_device(12, 3, 3, seed=trial)
        x = rng.standard_normal(model.dim) * 0.5
        analytic = full_gradient(model, x, data)
        fd = central_diff(lambda p: model.loss(p, data.features, data.labels), x)
        mask = np.abs(analytic) > 1e-8
        rel = np.abs(analytic[mask] - fd[mask]) / np.abs(analytic[mask])
        # components near the finite-difference noise floor are compared absolutely
        big = np.abs(analytic[mask]) > 1e-4
        assert np.all(rel[big] <= 1e-5), (kind, trial, rel.max())
        np.testing.assert_allclose(analytic, fd, atol=1e-9)


def test_quadratic_smoothness_constant_holds():
    rng = np.random.default_rng(3)
    model = QuadraticModel(4)
    data = quadratic_device(rng.standard_normal((6, 4)))
    for _ in range(100):
        x, xp = rng.standard_normal(4), rng.standard_normal(4)
        lhs = np.linalg.norm(full_gradient(model, x, data) - full_gradient(model, xp, data))
        assert lhs <= model.smoothness * np.linalg.norm(x - xp) + 1e-12


def test_prediction_is_a_probability_vector():
    rng = np.random.default_rng(0)
    for model in (LogisticModel(4, 5), MLPModel(4, 6, 5)):
        p = model.predict_proba(rng.standard_normal(model.dim) * 3, rng.standard_normal((10, 4)))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_mlp_init_reproducible_and_bounded():
    model = MLPModel(9, 4, 3)
    a, b = model.init_params(7), model.init_params(7)
    np.testing.assert_array_equal(a, b)
    w1 = a[: 4 * 9]
    assert np.all(np.abs(w1) <= 1 / 3)


def test_full_batch_equals_full_gradient():
    model = LogisticModel(3, 3)
    data = classification_device(17, 3, 3, seed=2)
    x = np.random.default_rng(1).standard_normal(model.dim)
    g = stoch_gradient(model, x, data, np.arange(len(data)))
    np.testing.assert_array_equal(g.gradient, full_gradient(model, x, data))


def test_single_sample_quadratic_batch():
    targets = np.array([[1.0, 2.0], [5.0, -1.0], [0.0, 0.0]])
    x = np.array([0.5, 0.5])
    g = stoch_gradient(QuadraticModel(2), x, quadratic_device(targets), [0])
    np.testing.assert_array_equal(g.gradient, x - targets[0])
    assert list(g.batch_ids) == [0]


def test_singleton_batches_average_to_full_gradient():
    model = LogisticModel(3, 2)
    data = classification_device(11, 3, 2, seed=8)
    x = np.random.default_rng(4).standard_normal(model.dim)
    mean = np.mean([stoch_gradient(model, x, data, [j]).gradient for j in range(len(data))], axis=0)
    np.testing.assert_allclose(mean, full_gradient(model, x, data), atol=1e-12)


def test_disjoint_epoch_batches_average_to_full_gradient():
    model = MLPModel(3, 4, 3)
    data = classification_device(24, 3, 3, seed=9)
    x = model.init_params(1)
    perm = np.random.default_rng(0).permutation(24)
    mean = np.mean([stoch_gradient(model, x, data, perm[i:i + 6]).gradient for i in range(0, 24, 6)], axis=0)
    np.testing.assert_allclose(mean, full_gradient(model, x, data), atol=1e-12)


def test_gradient_errors():
    model = QuadraticModel(2)
    data = quadratic_device([[1.0, 1.0]])
    with pytest.raises(ConfigError):
        full_gradient(model, np.zeros(3), data)
    with pytest.raises(ValueError):
        full_gradient(model, np.zeros(2), DeviceDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 0))
    with pytest.raises(IndexError):
        stoch_gradient(model, np.zeros(2), data, [1])


def test_sgd_step_plain():
    x, _ = sgd_step(np.array([1.0, 1.0]), np.array([1.0, 0.0]), 0.5)
    np.testing.assert_array_equal(x, [0.5, 1.0])


def test_sgd_step_momentum_two_steps():
    g = np.array([1.0, -2.0])
    x, v = sgd_step(np.zeros(2), g, 0.1, None, 0.9)
    x, v = sgd_step(x, g, 0.1, v, 0.9)
    # v1 = g, v2 = 1.9 g, x2 = -0.1 g - 0.19 g
    np.testing.assert_allclose(x, -0.29 * g, atol=1e-15)
    np.testing.assert_allclose(v, 1.9 * g, atol=1e-15)


def test_sgd_step_zero_gradient_is_fixed_point():
    x0 = np.array([3.0, -4.0])
    x, _ = sgd_step(x0, np.zeros(2), 0.7)
    np.testing.assert_array_equal(x, x0)


def test_sgd_step_rejects_bad_hyperparameters():
    with pytest.raises(ValueError):
        sgd_step(np.zeros(1), np.zeros(1), 0.0)
    with pytest.raises(ValueError):
        sgd_step(np.zeros(1), np.zeros(1), 0.1, None, 1.0)
