import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vicreg_audio.model import ModelConfig, ParamStore, init_params
from vicreg_audio.optim import (
    DOWNSTREAM_SCHEDULE,
    PRETRAIN_SCHEDULE,
    OptState,
    Schedule,
    adam_step,
    lr_at,
    sgd_step,
)


def scalar_store(value=1.0, name="layer.weight"):
    return ParamStore(ModelConfig(), {name: np.array([value])}, {})


class TestSchedule:
    def test_pretrain_endpoints(self):
        s = Schedule(**PRETRAIN_SCHEDULE, steps_per_epoch=7)
        assert abs(lr_at(s, 0) - 1e-4) <= 1e-12
        assert abs(lr_at(s, s.warmup_steps) - 0.3) <= 1e-12
        assert abs(lr_at(s, s.total_steps) - 1e-4) <= 1e-12

    def test_decay_midpoint(self):
        s = Schedule(**PRETRAIN_SCHEDULE)
        mid = s.warmup_steps + (s.total_steps - s.warmup_steps) // 2
        assert lr_at(s, mid) == pytest.approx(0.15005, abs=1e-12)

    def test_downstream_endpoints(self):
        s = Schedule(**DOWNSTREAM_SCHEDULE, steps_per_epoch=3)
        assert abs(lr_at(s, 0) - 1e-5) <= 1e-12
        assert abs(lr_at(s, s.warmup_steps) - 1e-3) <= 1e-12
        assert abs(lr_at(s, s.total_steps) - 1e-5) <= 1e-12

    def test_warmup_is_linear(self):
        s = Schedule(0.0, 1.0, 0.0, 4, 10, steps_per_epoch=1)
        assert [lr_at(s, i) for i in range(5)] == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_out_of_range(self):
        s = Schedule(**PRETRAIN_SCHEDULE)
        with pytest.raises(ValueError):
            lr_at(s, -1)
        with pytest.raises(ValueError):
            lr_at(s, s.total_steps + 1)

    @pytest.mark.parametrize("kwargs", [dict(warmup_epochs=0), dict(warmup_epochs=100), dict(steps_per_epoch=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            Schedule(**{**PRETRAIN_SCHEDULE, **kwargs})

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 30), st.integers(1, 5))
    def test_continuous_and_monotone_after_warmup(self, warmup, extra, spe):
        s = Schedule(1e-4, 0.3, 1e-4, warmup, warmup + extra, spe)
        w = s.warmup_steps
        assert lr_at(s, w) == pytest.approx(0.3, abs=1e-12)
        assert lr_at(s, w + 1) <= lr_at(s, w)
        lrs = [lr_at(s, i) for i in range(w, s.total_steps + 1)]
        assert all(b <= a + 1e-15 for a, b in zip(lrs, lrs[1:]))
        warm = [lr_at(s, i) for i in range(w + 1)]
        assert all(b >= a for a, b in zip(warm, warm[1:]))


class TestSGD:
    def test_first_two_steps(self):
        store, state = scalar_store(), OptState()
        sgd_step(store, {"layer.weight": np.array([1.0])}, state, lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(state.first["layer.weight"], [1.0])
        np.testing.assert_allclose(store["layer.weight"], [0.9])
        sgd_step(store, {"layer.weight": np.array([1.0])}, state, lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(state.first["layer.weight"], [1.9])
        np.testing.assert_allclose(store["layer.weight"], [0.71])

    def test_zero_lr_accumulates_momentum(self):
        store, state = scalar_store(), OptState()
        for _ in range(2):
            sgd_step(store, {"layer.weight": np.array([1.0])}, state, lr=0.0, weight_decay=0.0)
        np.testing.assert_array_equal(store["layer.weight"], [1.0])
        np.testing.assert_allclose(state.first["layer.weight"], [1.9])

    def test_weight_decay_only_on_weights(self):
        for name, decayed in (("layer.weight", True), ("layer.bias", False), ("enc.bn.weight", False)):
            store, state = scalar_store(2.0, name), OptState()
            sgd_step(store, {name: np.array([0.0])}, state, lr=1.0, momentum=0.9, weight_decay=0.5)
            assert store[name][0] == pytest.approx(1.0 if decayed else 2.0)

    def test_skips_frozen(self):
        store, state = scalar_store(), OptState()
        store.requires_grad["layer.weight"] = False
        sgd_step(store, {"layer.weight": np.array([1.0])}, state, lr=0.1)
        np.testing.assert_array_equal(store["layer.weight"], [1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sgd_step(scalar_store(), {"layer.weight": np.ones(2)}, OptState(), lr=0.1)
        with pytest.raises(KeyError):
            sgd_step(scalar_store(), {"other.weight": np.ones(1)}, OptState(), lr=0.1)

    def test_quadratic_descent(self):
        store, state = scalar_store(3.0), OptState()
        loss = lambda: 0.5 * float(store["layer.weight"][0]) ** 2  # noqa: E731
        before = loss()
        sgd_step(store, {"layer.weight": store["layer.weight"].copy()}, state, lr=0.01, weight_decay=0.0)
        assert loss() < before

    def test_keeps_dtype(self):
        store = ParamStore(ModelConfig(), {"w.weight": np.ones(3, dtype=np.float32)}, {})
        sgd_step(store, {"w.weight": np.ones(3, dtype=np.float32)}, OptState(), lr=0.1)
        assert store["w.weight"].dtype == np.float32


class TestAdam:
    def test_first_step(self):
        store, state = scalar_store(), OptState()
        adam_step(store, {"layer.weight": np.array([1.0])}, state, lr=1e-3)
        # bias-corrected moments are exactly g and g^2, so the step is lr / (1 + eps)
        assert 1.0 - store["layer.weight"][0] == pytest.approx(1e-3 / (1.0 + 1e-8), rel=1e-12)

    def test_zero_gradient(self):
        store, state = scalar_store(), OptState()
        for _ in range(3):
            adam_step(store, {"layer.weight": np.array([0.0])}, state, lr=1e-3)
        np.testing.assert_array_equal(store["layer.weight"], [1.0])
        assert state.step == 3

    def test_deterministic(self):
        cfg = ModelConfig(encoder_blocks=({"channels": 4},), encoder_out_dim=4, projector_dim=3,
                          num_classes=2, input_shape=(5, 5))
        runs = []
        for _ in range(2):
            store, state = init_params(cfg, 0), OptState()
            g = np.random.default_rng(0)
            for _ in range(3):
                adam_step(store, {n: g.normal(size=store[n].shape) for n in store.names}, state, lr=1e-2)
            runs.append(store)
        for n in runs[0].names:
            np.testing.assert_array_equal(runs[0][n], runs[1][n])
