import numpy as np
import pytest

from maxfl_sim import models
from maxfl_sim.client import (ClientProfile, appeal_gap, byzantine_corrupt, evaluate_appeal, fine_tune,
                              local_train, sample_batch, sgd, warmup)
from maxfl_sim.core import ConfigError, LossBasis, RngStream, WeightMode, weight_from_gap
from maxfl_sim.data import make_mean_estimation
from maxfl_sim.models import Batch, ModelSpec

QUAD = ModelSpec.scalar_quadratic()


def quad_batch(values):
    values = np.asarray(values, dtype=float)
    return Batch(np.zeros((len(values), 0)), values)


def test_sample_batch_full_split_when_b_is_none():
    b = quad_batch([1.0, 2.0])
    assert sample_batch(b, None, np.random.default_rng(0)) is b


def test_sample_batch_with_replacement_size():
    b = quad_batch(np.arange(3))
    assert sample_batch(b, 10, np.random.default_rng(0)).size == 10


def test_full_batch_sgd_on_quadratic_is_geometric():
    # w_{t+1} - m = (1 - 2 eta)(w_t - m)
    b = quad_batch([1.0, 3.0])
    w = sgd(QUAD, np.array([0.0]), b, 5, 0.1, None, np.random.default_rng(0))
    assert w[0] == pytest.approx(2.0 - 2.0 * 0.8 ** 5, rel=1e-14)


def test_proximal_term_pulls_toward_anchor():
    b = quad_batch([10.0])
    free = sgd(QUAD, np.zeros(1), b, 20, 0.05, None, np.random.default_rng(0), anchor=np.zeros(1))
    prox = sgd(QUAD, np.zeros(1), b, 20, 0.05, None, np.random.default_rng(0), anchor=np.zeros(1), prox_mu=5.0)
    assert 0 < prox[0] < free[0]


def test_zero_mu_is_bit_identical_to_plain_sgd():
    spec, b = ModelSpec.softmax_regression(3, 2), Batch(np.eye(3), np.array([0, 1, 1]))
    a = sgd(spec, np.zeros(spec.dim), b, 7, 0.3, 2, np.random.default_rng(5))
    c = sgd(spec, np.zeros(spec.dim), b, 7, 0.3, 2, np.random.default_rng(5), anchor=np.ones(spec.dim), prox_mu=0.0)
    np.testing.assert_array_equal(a, c)


def test_correction_shifts_every_step():
    b = quad_batch([0.0])
    w = sgd(QUAD, np.zeros(1), b, 1, 0.1, None, np.random.default_rng(0), correction=np.array([1.0]))
    assert w[0] == pytest.approx(-0.1)


def profile(values, k=0):
    d, _ = make_mean_estimation([0.0], 1.0, 2, RngStream(0))
    ds = d[0]
    ds.train = quad_batch(values)
    return ClientProfile(k, ds)


class TestWarmup:
    def test_rho_is_train_loss_of_solo_model(self):
        p = profile([1.0, 3.0])
        warmup(p, QUAD, 100, 0.1, None, RngStream(0))
        assert p.solo_model[0] == pytest.approx(2.0)
        assert p.rho == pytest.approx(1.0)

    def test_requirement_frozen(self):
        p = profile([1.0])
        warmup(p, QUAD, 3, 0.1, None, RngStream(0))
        with pytest.raises(RuntimeError):
            warmup(p, QUAD, 3, 0.1, None, RngStream(0))
        with pytest.raises(RuntimeError):
            p.set_requirement(np.zeros(1), 0.0)
        with pytest.raises(ValueError):
            p.solo_model[0] = 5.0

    def test_needs_a_step(self):
        with pytest.raises(ConfigError):
            warmup(profile([1.0]), QUAD, 0, 0.1, None, RngStream(0))

    def test_rho_before_warmup_raises(self):
        with pytest.raises(RuntimeError):
            profile([1.0]).rho


class TestLocalTrain:
    def setup_method(self):
        self.p = profile([1.0, 3.0])
        warmup(self.p, QUAD, 100, 0.1, None, RngStream(0))

    def test_weight_and_gap_computed_at_start(self):
        u = local_train(self.p, QUAD, np.array([0.0]), 3, 0.1, None, RngStream(1))
        gap = models.loss(QUAD, np.array([0.0]), self.p.dataset.train) - self.p.rho
        assert u.gap == pytest.approx(gap) == pytest.approx(4.0)
        assert u.reported_weight == weight_from_gap(u.gap)
        assert u.n_train == 2 and u.valid

    def test_delta_is_start_minus_end(self):
        u = local_train(self.p, QUAD, np.array([0.0]), 1, 0.1, None, RngStream(1))
        assert u.delta[0] == pytest.approx(-0.4)

    def test_divergence_marks_invalid(self):
        u = local_train(self.p, QUAD, np.array([0.0]), 2000, 5.0, None, RngStream(1))
        assert not u.valid

    def test_raw_sigmoid_mode(self):
        u = local_train(self.p, QUAD, np.array([0.0]), 1, 0.1, None, RngStream(1), WeightMode.RAW_SIGMOID)
        assert u.reported_weight == pytest.approx(1 / (1 + np.exp(-4.0)))

    def test_appeal_gap_and_appeal(self):
        assert appeal_gap(self.p, QUAD, np.array([2.0])) == pytest.approx(0.0, abs=1e-12)
        assert not evaluate_appeal(self.p, QUAD, np.array([0.0]), LossBasis.TRAIN)


class TestByzantine:
    def base(self):
        p = profile([0.0, 0.0])
        warmup(p, QUAD, 10, 0.1, None, RngStream(0))
        return local_train(p, QUAD, np.array([0.0]), 1, 0.1, None, RngStream(1))

    def test_inflated_gap_collapses_bell_weight(self):
        u = byzantine_corrupt(self.base(), 10.0, 0.0, RngStream(2))
        assert u.reported_weight == weight_from_gap(self.base().gap + 10.0)
        assert u.reported_weight < 1e-4

    def test_inflated_gap_raises_raw_sigmoid_weight(self):
        u = byzantine_corrupt(self.base(), 10.0, 0.0, RngStream(2), WeightMode.RAW_SIGMOID)
        assert u.reported_weight > 0.99

    def test_noise_added_to_delta(self):
        a = byzantine_corrupt(self.base(), 0.0, 1.0, RngStream(2))
        b = byzantine_corrupt(self.base(), 0.0, 1.0, RngStream(2))
        np.testing.assert_array_equal(a.delta, b.delta)
        assert a.delta[0] != self.base().delta[0]


def test_fine_tune_zero_steps_copies():
    p = profile([1.0])
    w = np.array([0.5])
    out = fine_tune(p, QUAD, w, 0, 0.1, None, RngStream(0))
    assert out is not w and out[0] == 0.5
    with pytest.raises(ConfigError):
        fine_tune(p, QUAD, w, -1, 0.1, None, RngStream(0))
