import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flsim import models
from flsim.data import Dataset
from flsim.errors import DimensionError, EmptyDatasetError
from flsim.models import Metrics, ModelSpec


def central_diff(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


class TestPredict:
    def test_zero_params_give_half(self):
        spec = ModelSpec("logistic", 3)
        assert models.predict(np.zeros(4), spec, [5.0, -2.0, 1.0]) == 0.5

    def test_zero_dot_product(self):
        spec = ModelSpec("logistic", 1)
        assert models.predict([1.0, 0.0], spec, [0.0]) == 0.5

    def test_sigmoid_of_two(self):
        spec = ModelSpec("logistic", 1)
        assert models.predict([2.0, 0.0], spec, [1.0]) == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-15)
        assert models.predict([2.0, 0.0], spec, [1.0]) == pytest.approx(0.8808, abs=1e-4)

    def test_dimension_mismatch(self):
        spec = ModelSpec("logistic", 2)
        with pytest.raises(DimensionError):
            models.predict(np.zeros(4), spec, [1.0, 1.0])
        with pytest.raises(DimensionError):
            models.predict(np.zeros(3), spec, [1.0])

    def test_param_counts(self):
        assert ModelSpec("logistic", 16).n_params == 17
        assert ModelSpec("mlp1", 16, 8).n_params == 17 * 8 + 8 + 1

    def test_extreme_logits_stay_finite(self):
        spec = ModelSpec("logistic", 1)
        assert models.predict([1e4, 0.0], spec, [1.0]) == 1.0
        assert models.predict([-1e4, 0.0], spec, [1.0]) == 0.0


@pytest.mark.parametrize("kind", ["logistic", "mlp1"])
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(kind, 5, 4)
    params = rng.normal(scale=0.7, size=spec.n_params)
    X = rng.normal(size=(9, 5))
    y = rng.integers(0, 2, size=9)
    analytic = models.loss_grad(params, spec, X, y)
    numeric = central_diff(lambda p: models.loss(p, spec, X, y), params)
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
    assert rel < 1e-4


class TestLocalTrain:
    def one_sample(self):
        return Dataset([[1.0]], [1])

    def test_single_step_hand_gradient(self):
        spec = ModelSpec("logistic", 1)
        upd = models.local_train(np.zeros(2), spec, self.one_sample(), 1, 1, 0.1, seed=0)
        # (p - y) * x with p = 0.5, y = 1, x = 1 -> -0.5; step -lr * grad = +0.05
        np.testing.assert_allclose(upd.delta, [0.05, 0.05], atol=1e-15)
        assert upd.sample_count == 1

    def test_hand_gradient_agrees_with_finite_differences(self):
        spec = ModelSpec("logistic", 1)
        d = self.one_sample()
        numeric = central_diff(lambda p: models.loss(p, spec, d.X, d.y), np.zeros(2))
        np.testing.assert_allclose(-0.1 * numeric, [0.05, 0.05], atol=1e-8)

    def test_zero_lr_gives_zero_delta(self):
        rng = np.random.default_rng(1)
        d = Dataset(rng.normal(size=(20, 3)), rng.integers(0, 2, 20))
        upd = models.local_train(rng.normal(size=4), ModelSpec("logistic", 3), d, 2, 4, 0.0, seed=3)
        assert np.all(upd.delta == 0)

    def test_deterministic_and_does_not_mutate(self):
        rng = np.random.default_rng(2)
        d = Dataset(rng.normal(size=(30, 4)), rng.integers(0, 2, 30))
        spec = ModelSpec("mlp1", 4, 3)
        received = models.init_params(spec, 5)
        before = received.copy()
        a = models.local_train(received, spec, d, 2, 7, 0.2, seed=11)
        b = models.local_train(received, spec, d, 2, 7, 0.2, seed=11)
        assert np.array_equal(a.delta, b.delta)
        assert np.array_equal(received, before)

    def test_delta_reproduces_trained_params(self):
        rng = np.random.default_rng(4)
        d = Dataset(rng.normal(size=(25, 3)), rng.integers(0, 2, 25))
        spec = ModelSpec("logistic", 3)
        received = rng.normal(size=4)
        upd = models.local_train(received, spec, d, 3, 4, 0.3, seed=9)
        trained = models.sgd(received, spec, d.X, d.y, 3, 4, 0.3, np.random.default_rng(9))
        np.testing.assert_allclose(received + upd.delta, trained, rtol=0, atol=1e-12)

    def test_partial_batch_is_used(self):
        # 3 samples, batch 2: two steps per epoch, the second on a single sample.
        d = Dataset([[1.0], [1.0], [1.0]], [1, 1, 1])
        spec = ModelSpec("logistic", 1)
        upd = models.local_train(np.zeros(2), spec, d, 1, 2, 0.1, seed=0)
        p = models.sgd(np.zeros(2), spec, d.X[:2], d.y[:2], 1, 2, 0.1, np.random.default_rng(0))
        p = p - 0.1 * models.loss_grad(p, spec, d.X[:1], d.y[:1])
        np.testing.assert_allclose(upd.delta, p, atol=1e-15)

    def test_empty_dataset(self):
        empty = Dataset(np.zeros((0, 2)), [])
        with pytest.raises(EmptyDatasetError):
            models.local_train(np.zeros(3), ModelSpec("logistic", 2), empty, 1, 1, 0.1, 0)


class TestEvaluate:
    def test_perfect_separation(self):
        d = Dataset([[-2.0], [-1.0], [1.0], [2.0]], [0, 0, 1, 1])
        m = models.evaluate([5.0, 0.0], ModelSpec("logistic", 1), d)
        assert (m.accuracy, m.precision, m.recall) == (1.0, 1.0, 1.0)

    def test_constant_positive_predictor(self):
        d = Dataset([[0.0]] * 4, [0, 1, 0, 1])
        m = models.evaluate([0.0, 10.0], ModelSpec("logistic", 1), d)
        assert m.recall == 1.0 and m.precision == 0.5

    def test_one_of_each_cell(self):
        m = Metrics.from_counts(1, 1, 1, 1)
        assert (m.accuracy, m.precision, m.recall) == (0.5, 0.5, 0.5)

    def test_no_positive_predictions_flags_precision(self):
        d = Dataset([[0.0]] * 2, [0, 1])
        m = models.evaluate([0.0, -10.0], ModelSpec("logistic", 1), d)
        assert m.precision == 0.0 and m.precision_undefined

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            models.evaluate(np.zeros(2), ModelSpec("logistic", 1), Dataset(np.zeros((0, 1)), []))


@settings(max_examples=300)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_metric_identities(tp, fp, tn, fn):
    m = Metrics.from_counts(tp, fp, tn, fn)
    total = tp + fp + tn + fn
    if total:
        assert m.accuracy == pytest.approx((tp + tn) / total)
    if m.precision + m.recall > 0:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
    for v in (m.accuracy, m.precision, m.recall, m.f1):
        assert 0.0 <= v <= 1.0
