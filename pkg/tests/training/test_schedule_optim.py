import unittest

import numpy as np

from claip_emo.config import RunConfig
from claip_emo.errors import InvalidConfigValueError, NonFiniteGradientError
from claip_emo.numerics.module import Parameter
from claip_emo.numerics.tensor import default_dtype
from claip_emo.training.losses import probability_cross_entropy
from claip_emo.training.optim import Adam, OptimizerState, adam_step, clip_grad_norm
from claip_emo.training.schedule import CosineWarmupSchedule, lr_at


class TestSchedule(unittest.TestCase):

    def setUp(self) -> None:
        self.schedule = CosineWarmupSchedule(lr_peak=1e-3, lr_min=1e-5, warmup_steps=10, total_steps=110)

    def test_warmup_starts_at_zero_and_reaches_peak(self):
        assert lr_at(0, self.schedule) == 0.0
        assert abs(lr_at(5, self.schedule) - 5e-4) < 1e-12
        assert abs(lr_at(10, self.schedule) - 1e-3) < 1e-12

    def test_continuous_at_the_end_of_warmup(self):
        before = lr_at(10 - 1e-9, self.schedule)
        after = lr_at(10, self.schedule)
        assert abs(before - after) < 1e-12

    def test_cosine_midpoint_and_end(self):
        assert abs(lr_at(60, self.schedule) - (1e-3 + 1e-5) / 2) < 1e-12
        assert abs(lr_at(110, self.schedule) - 1e-5) < 1e-12
        assert abs(lr_at(500, self.schedule) - 1e-5) < 1e-12

    def test_monotone_decay(self):
        rates = [lr_at(s, self.schedule) for s in range(10, 111)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_no_warmup(self):
        schedule = CosineWarmupSchedule(lr_peak=1e-3, lr_min=0.0, warmup_steps=0, total_steps=10)
        assert lr_at(0, schedule) == 1e-3

    def test_default_warmup_epochs(self):
        assert RunConfig().train.resolved_warmup_epochs == 1
        cfg = RunConfig().with_overrides({"train.epochs": 100})
        assert cfg.train.resolved_warmup_epochs == 5
        assert RunConfig().with_overrides({"train.epochs": 1}).train.resolved_warmup_epochs == 0
        schedule = CosineWarmupSchedule.from_settings(cfg.train, steps_per_epoch=3)
        assert schedule.warmup_steps == 15 and schedule.total_steps == 300

    def test_warmup_must_be_shorter_than_training(self):
        with self.assertRaises(InvalidConfigValueError):
            RunConfig().with_overrides({"train.epochs": 4, "train.warmup_epochs": 4})


class TestAdam(unittest.TestCase):

    def test_first_step_is_sign_like(self):
        with default_dtype(np.float64):
            p = Parameter(np.array([1.0, -2.0, 0.5]))
        start = p.data.copy()
        g = np.array([0.3, -4.0, 1e-3])
        p.grad = g.copy()
        adam_step([("p", p)], state=OptimizerState.for_params([("p", p)]), lr=0.01)
        expected = start - 0.01 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p.data, expected, rtol=0, atol=1e-12)

    def test_converges_on_a_quadratic(self):
        target = np.array([1.0, -2.0, 0.5])
        with default_dtype(np.float64):
            x = Parameter(np.zeros(3))
        optimizer = Adam([("x", x)])
        for _ in range(200):
            x.grad = 2.0 * (x.data - target)
            optimizer.step(lr=0.1)
        assert np.max(np.abs(x.data - target)) < 1e-3

    def test_zero_gradients_leave_parameters_unchanged(self):
        with default_dtype(np.float64):
            p = Parameter(np.array([0.3, -1.5, 2.0]))
        start = p.data.copy()
        optimizer = Adam([("p", p)])
        for _ in range(5):
            p.grad = np.zeros(3)
            optimizer.step(lr=0.1)
        assert np.array_equal(p.data, start)
        assert optimizer.state.step == 5

    def test_non_finite_gradient_updates_nothing(self):
        a = Parameter(np.ones(3))
        b = Parameter(np.ones(2))
        a.grad = np.ones(3, dtype=np.float32)
        b.grad = np.array([1.0, np.nan], dtype=np.float32)
        optimizer = Adam([("a", a), ("b", b)])
        with self.assertRaises(NonFiniteGradientError) as ctx:
            optimizer.step(lr=0.1)
        assert "`b`" in str(ctx.exception)
        assert np.array_equal(a.data, np.ones(3)) and np.array_equal(b.data, np.ones(2))
        assert optimizer.state.step == 0

    def test_tensors_without_gradient_are_skipped(self):
        a = Parameter(np.ones(3))
        b = Parameter(np.ones(2))
        a.grad = np.ones(3, dtype=np.float32)
        optimizer = Adam([("a", a), ("b", b)])
        optimizer.step(lr=0.1)
        assert not np.array_equal(a.data, np.ones(3))
        assert np.array_equal(b.data, np.ones(2))

    def test_frozen_tensors_are_not_tracked(self):
        frozen = Parameter(np.ones(2), requires_grad=False)
        optimizer = Adam([("frozen", frozen), ("live", Parameter(np.ones(2)))])
        assert len(optimizer) == 1

    def test_clip_grad_norm(self):
        with default_dtype(np.float64):
            p = Parameter(np.zeros(2))
        p.grad = np.array([3.0, 4.0])
        assert abs(clip_grad_norm([("p", p)], max_norm=1.0) - 5.0) < 1e-12
        assert abs(np.linalg.norm(p.grad) - 1.0) < 1e-5
        p.grad = np.array([0.3, 0.4])
        clip_grad_norm([("p", p)], max_norm=1.0)
        assert np.array_equal(p.grad, [0.3, 0.4])


class TestLosses(unittest.TestCase):

    def test_probability_cross_entropy(self):
        assert abs(probability_cross_entropy(np.array([0.25, 0.75]), label=1) + np.log(0.75)) < 1e-12
