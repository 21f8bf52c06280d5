import math

import numpy as np
import pytest

from rpol.environments import (
    DelaySpec,
    Environment,
    FeedbackEvent,
    FunctionSchedule,
    NoiseSpec,
    REGISTRY,
    RngStreams,
    SQUARE_0_6,
    Segment,
    f_base,
    f_late,
    f_mid,
    g_base,
    g_late,
    g_mid,
    load_variation_norms,
    rkhs_norm_estimate,
)


class TestStreams:
    def test_reproducible(self):
        a = RngStreams(7)["reward-noise"].normal(size=5)
        b = RngStreams(7)["reward-noise"].normal(size=5)
        np.testing.assert_array_equal(a, b)

    def test_streams_independent(self):
        s1, s2 = RngStreams(7), RngStreams(7)
        s2["cost-delay"].poisson(3.0, size=100)  # consuming one stream ...
        np.testing.assert_array_equal(s1["reward-noise"].normal(size=5),
                                      s2["reward-noise"].normal(size=5))  # ... leaves others alone

    def test_unknown_stream(self):
        with pytest.raises(KeyError):
            RngStreams(1)["bogus"]


class TestFunctions:
    def test_closed_forms(self):
        x = np.array([[1.0, 2.0]])
        assert f_base(x)[0] == pytest.approx(-math.sin(1) - 2)
        assert g_base(x)[0] == pytest.approx(math.sin(1) * math.sin(2) + 0.95)
        assert f_mid(x)[0] == pytest.approx(-math.sin(-4) - 2)
        assert g_mid(x)[0] == pytest.approx(math.sin(1) * math.sin(7) + 0.5)
        assert f_late(x)[0] == pytest.approx(-math.sin(5) - 2)
        assert g_late(x)[0] == pytest.approx(math.sin(6) * math.sin(2) + 0.95)

    def test_schedule(self):
        env = Environment.from_name("scbwc-nonstationary")
        assert [env.schedule.segment_index(t) for t in (1, 100, 101, 300, 301, 500)] == [0, 0, 1, 1, 2, 2]
        v = env.variation_series(400)
        assert v.shape == (401, 2)
        assert np.count_nonzero(v[:, 0]) == 2 and v[100, 0] > 0 and v[300, 0] > 0
        with pytest.raises(ValueError):
            env.schedule.segment_index(0)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            FunctionSchedule((Segment(2, f_base, g_base),))
        with pytest.raises(ValueError):
            FunctionSchedule((Segment(1, f_base, g_base), Segment(1, f_mid, g_mid)))

    def test_registry(self):
        for name in REGISTRY:
            Environment.from_name(name)
        with pytest.raises(ValueError, match="registry"):
            Environment.from_name("nope")
        assert Environment.from_name("scbwc-delayed").delay == DelaySpec("poisson", mean=15.0)


class TestStep:
    def test_noise_free_step_is_truth(self):
        env = Environment.from_name("scbwc", noise=NoiseSpec(0.0, 0.0))
        ev = env.step([1.0, 2.0], 1, RngStreams(0))
        f, g = env.true_values([1.0, 2.0], 1)
        assert (ev.reward_obs, ev.cost_obs) == (f, g)
        assert (ev.reward_delay, ev.cost_delay) == (0, 0)

    def test_noise_variance(self):
        env = Environment.from_name("scbwc")
        streams = RngStreams(3)
        r = np.array([env.step([1.0, 1.0], 1, streams).reward_obs for _ in range(4000)])
        assert r.var() == pytest.approx(0.05, rel=0.1)

    def test_outside_domain(self):
        env = Environment.from_name("scbwc")
        with pytest.raises(ValueError, match="outside"):
            env.step([7.0, 0.0], 1, RngStreams(0))

    def test_poisson_delay_mean(self):
        env = Environment.from_name("scbwc-delayed")
        streams = RngStreams(4)
        d = [env.step([1.0, 1.0], t, streams).cost_delay for t in range(1, 3001)]
        assert np.mean(d) == pytest.approx(15.0, rel=0.05)

    def test_fixed_delay(self):
        assert DelaySpec("fixed", d=4).sample(np.random.default_rng()) == 4
        with pytest.raises(ValueError):
            DelaySpec("fixed", d=-1)
        with pytest.raises(ValueError):
            DelaySpec("poisson", mean=0.0)

    def test_event_validation(self):
        with pytest.raises(ValueError):
            FeedbackEvent(1, (0.0,), 0.0, 0.0, reward_delay=-1)


class TestVariationNorms:
    def test_packaged_estimates_reproduce(self):
        data = load_variation_norms()
        est = rkhs_norm_estimate(lambda X: f_base(X) - f_mid(X), SQUARE_0_6, 1.0, resolution=30)
        assert est == pytest.approx(data["changes"][0]["f"], rel=1e-4)

    def test_zero_function(self):
        assert rkhs_norm_estimate(lambda X: np.zeros(len(X)), SQUARE_0_6, 1.0, 5) == 0.0

    def test_kernel_section_norm(self):
        # h = k(., z) has RKHS norm exactly 1
        z = np.array([3.0, 3.0])
        h = lambda X: np.exp(-np.sum((X - z) ** 2, axis=1) / 2.0)
        assert rkhs_norm_estimate(h, SQUARE_0_6, 1.0, resolution=13, nugget=1e-9) <= 1.0 + 1e-3
