import math

import numpy as np
import pytest

from advtransfer.attack import (
    AttackConfig,
    AttackDivergedError,
    Schedule,
    cw_attack,
    ensemble_loss,
    ensemble_loss_and_gradient,
    l2_project,
    linf_project,
    pgd_attack,
    step_size,
)
from advtransfer.models import DifferentiableModel, ModelEvaluationError, ModelMode
from advtransfer.targets import transcript_target

TARGET = transcript_target("X")


class Quadratic(DifferentiableModel):
    """loss = 0.5 * |x - centre|^2; with ``jitter`` the centre moves in stochastic mode."""

    def __init__(self, name, centre, jitter=0.0):
        self.name = name
        self.centre = np.asarray(centre, dtype=np.float64)
        self.jitter = jitter
        self.rng = np.random.default_rng(0)
        self.calls = 0

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def _centre(self):
        if self.mode is ModelMode.STOCHASTIC and self.jitter:
            return self.centre + self.jitter * self.rng.standard_normal(self.centre.shape)
        return self.centre

    def forward(self, x):
        return np.asarray(x) - self._centre()

    def loss_and_gradient(self, x, target):
        self.calls += 1
        r = np.asarray(x) - self._centre()
        return 0.5 * float(np.sum(r * r)), r

    def predict(self, x):
        return ""


class LinearSoftmax(DifferentiableModel):
    """Cross-entropy of a fixed linear-softmax classifier towards class 0; convex in x."""

    def __init__(self, W):
        self.name = "linsoft"
        self.W = W

    def forward(self, x):
        z = self.W @ x
        return np.exp(z - np.logaddexp.reduce(z))

    def loss_and_gradient(self, x, target):
        p = self.forward(x)
        onehot = np.eye(len(p))[0]
        return float(-np.log(p[0])), self.W.T @ (p - onehot)

    def predict(self, x):
        return int(self.forward(x).argmax())


class Broken(Quadratic):
    def loss_and_gradient(self, x, target):
        raise RuntimeError("boom")


def cfg(**kw):
    base = dict(linf_radius=0.1, learning_rate=0.05, iterations=50, reg_const=0.0, checkpoint_every=10,
                stochastic_proxy=False)
    base.update(kw)
    return AttackConfig(**base)


class TestConfig:
    def test_reference_defaults(self):
        c = AttackConfig()
        assert (c.linf_radius, c.learning_rate, c.iterations, c.reg_const) == (0.015, 5e-4, 10000, 10.0)
        assert c.stochastic_proxy

    @pytest.mark.parametrize("bad", [dict(linf_radius=0), dict(iterations=0), dict(learning_rate=-1),
                                     dict(checkpoint_every=0), dict(reg_const=-1), dict(clip_min=1.0)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            AttackConfig(**bad)

    def test_dict_round_trip_and_fingerprint(self):
        c = cfg(lr_schedule="cosine")
        d = c.to_dict()
        assert d["lr_schedule"] == "cosine"
        assert AttackConfig.from_dict(d) == c
        assert AttackConfig.from_dict(d).fingerprint() == c.fingerprint() != cfg().fingerprint()
        with pytest.raises(KeyError):
            AttackConfig.from_dict({"eps": 1})

    def test_cosine_schedule(self):
        c = cfg(lr_schedule=Schedule.COSINE, iterations=10, learning_rate=1.0)
        assert step_size(c, 0) == 1.0
        assert step_size(c, 5) == pytest.approx(0.5)
        assert step_size(cfg(), 7) == 0.05


class TestProjection:
    def test_linf(self):
        np.testing.assert_array_equal(linf_project(np.array([-1.0, 0.05, 2.0]), 0.1), [-0.1, 0.05, 0.1])

    def test_l2(self):
        d = l2_project(np.array([3.0, 4.0]), 1.0)
        assert np.linalg.norm(d) == pytest.approx(1.0)
        np.testing.assert_array_equal(l2_project(np.array([0.3, 0.4]), 1.0), [0.3, 0.4])

    def test_l2_per_row(self):
        d = l2_project(np.array([[3.0, 4.0], [0.1, 0.0]]), 1.0, axis=0)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), [1.0, 0.1])


class TestCwAttack:
    def test_zero_lr_returns_zero(self):
        res = cw_attack([Quadratic("p", [1.0, 1.0])], None, np.full(2, 0.5), TARGET, cfg(learning_rate=0.0))
        assert not res.delta.any() and res.achieved_snr == math.inf

    def test_single_iteration_is_one_projected_step(self):
        x = np.array([0.2, -0.3, 0.0])
        p = Quadratic("p", [1.0, -1.0, 0.01])
        res = cw_attack([p], None, x, TARGET, cfg(iterations=1, learning_rate=0.5))
        expected = np.clip(-0.5 * (x - p.centre), -0.1, 0.1)
        np.testing.assert_allclose(res.delta, expected)
        assert res.best_iteration == 1 and len(res.proxy_loss_trace) == 1

    def test_bound_and_clip_hold_every_step(self, rng):
        x = rng.uniform(-1, 1, size=50)
        x[:5] = 0.98
        seen = []

        def check(it, d):
            seen.append(it)
            assert np.abs(d).max() <= 0.1 + 1e-12
            assert np.all(np.abs(x + d) <= 1.0)

        cw_attack([Quadratic("p", np.full(50, 3.0))], None, x, TARGET, cfg(learning_rate=1.0), on_iterate=check)
        assert seen == list(range(1, 51))

    def test_regularizer_pulls_towards_zero(self):
        x = np.zeros(2) + 0.5
        p = Quadratic("p", x + 0.05)
        free = cw_attack([p], None, x, TARGET, cfg(iterations=400))
        reg = cw_attack([p], None, x, TARGET, cfg(iterations=400, reg_const=1.0))
        # stationary point of 0.5|d - 0.05|^2 + c|d|^2 is 0.05 / (1 + 2c)
        np.testing.assert_allclose(free.delta, 0.05, atol=1e-6)
        np.testing.assert_allclose(reg.delta, 0.05 / 3, atol=1e-6)

    def test_ensemble_sums(self, rng):
        a, b = Quadratic("a", [1.0, 0.0]), Quadratic("b", [0.0, 2.0])
        x = rng.normal(size=2)
        la, ga = a.loss_and_gradient(x, TARGET)
        lb, gb = b.loss_and_gradient(x, TARGET)
        loss, grad = ensemble_loss_and_gradient([a, b], x, TARGET)
        assert loss == pytest.approx(la + lb)
        np.testing.assert_allclose(grad, ga + gb)
        assert ensemble_loss([a, b], x, TARGET) == pytest.approx(la + lb)

    def test_convex_objective_decreases(self, rng):
        W = rng.normal(size=(4, 6))
        model = LinearSoftmax(W)
        x = rng.uniform(-0.5, 0.5, size=6)
        c = 0.5
        config = cfg(learning_rate=0.05, iterations=200, reg_const=c, linf_radius=0.3)
        values = []

        def objective(it, d):
            values.append(model.loss(x + d, TARGET) + c * float(d @ d))

        cw_attack([model], None, x, TARGET, config, on_iterate=objective)
        assert np.all(np.diff(values) <= 1e-12)

    def test_reproducible_with_stochastic_proxy(self, rng):
        x = rng.normal(scale=0.3, size=8)
        runs = [cw_attack([Quadratic("p", np.ones(8), jitter=0.5)], Quadratic("v", np.ones(8)), x, TARGET,
                          cfg(stochastic_proxy=True, seed=3)) for _ in range(2)]
        np.testing.assert_array_equal(runs[0].delta, runs[1].delta)
        other = cw_attack([Quadratic("p", np.ones(8), jitter=0.5)], None, x, TARGET, cfg(stochastic_proxy=True, seed=4))
        assert not np.array_equal(other.final_delta, runs[0].final_delta)

    def test_validation_checkpoint_is_best(self, rng):
        x = np.zeros(3)
        proxy = Quadratic("p", [1.0, 1.0, 1.0], jitter=0.3)
        # validation wants the opposite direction, so early checkpoints win
        val = Quadratic("v", [0.02, 0.0, 0.0])
        res = cw_attack([proxy], val, x, TARGET, cfg(stochastic_proxy=True, iterations=45, checkpoint_every=10))
        its = [i for i, _ in res.validation_loss_trace]
        assert its == [10, 20, 30, 40, 45]
        best = min(res.validation_loss_trace, key=lambda t: t[1])
        assert res.best_iteration == best[0]
        assert val.loss(x + res.delta, TARGET) == pytest.approx(best[1])
        assert res.best_validation_loss == best[1] <= res.final_validation_loss

    def test_no_validation_returns_final(self):
        res = cw_attack([Quadratic("p", [1.0])], None, np.zeros(1), TARGET, cfg())
        np.testing.assert_array_equal(res.delta, res.final_delta)
        assert res.validation_loss_trace == [] and res.best_iteration == 50

    def test_modes_restored(self):
        p = Quadratic("p", [1.0])
        cw_attack([p], None, np.zeros(1), TARGET, cfg(stochastic_proxy=True, iterations=2))
        assert p.mode is ModelMode.DETERMINISTIC

    def test_model_failure_is_named(self):
        with pytest.raises(ModelEvaluationError, match="'bad'"):
            cw_attack([Broken("bad", [0.0])], None, np.zeros(1), TARGET, cfg())

    def test_nan_loss_diverges(self):
        with pytest.raises(AttackDivergedError):
            cw_attack([Quadratic("p", [math.nan])], None, np.zeros(1), TARGET, cfg())

    def test_needs_proxy_and_linf(self):
        with pytest.raises(ValueError):
            cw_attack([], None, np.zeros(1), TARGET, cfg())
        with pytest.raises(ValueError):
            cw_attack([Quadratic("p", [1.0])], None, np.zeros(1), TARGET, cfg(norm="l2"))

    def test_snr_bound_sets_radius(self, rng):
        x = rng.uniform(-0.5, 0.5, size=100)
        res = cw_attack([Quadratic("p", x + 10)], None, x, TARGET, cfg(snr_bound=30.0, learning_rate=1.0))
        assert res.achieved_snr == pytest.approx(30.0, abs=1e-9)


class TestPgd:
    def test_l2_ball(self, rng):
        x = rng.normal(size=5)
        res = pgd_attack(Quadratic("p", x + 5), x, TARGET, cfg(norm="l2", l2_radius=0.5, step_rule="normalized",
                                                               clip_min=-100, clip_max=100))
        assert np.linalg.norm(res.delta) == pytest.approx(0.5)

    def test_batched_balls_are_independent(self, rng):
        x = rng.normal(size=(3, 4))
        centre = x.copy()
        centre[0] += 10
        res = pgd_attack(Quadratic("p", centre), x, TARGET,
                         cfg(norm="l2", l2_radius=0.5, step_rule="normalized", iterations=200, clip_min=-100,
                             clip_max=100), batched=True)
        norms = np.linalg.norm(res.delta, axis=1)
        assert norms[0] == pytest.approx(0.5)
        assert norms[1:].max() < 0.1
        assert math.isnan(res.achieved_snr)
