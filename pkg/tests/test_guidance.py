import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asag.diffusion import ddim_step, ddim_timesteps, make_schedule
from asag.errors import ContractError, DimensionError, InputError
from asag.guidance import (METHODS, GuidanceSpec, asag_sample, default_scale, guidance_energy,
                           guided_epsilon, initial_noise, scale_sweep)
from asag.metrics import energy_distance, mode_coverage
from asag.model import NULL_CLASS, ModelConfig, init_params, predict_eps
from asag.tensor import Rng

SCHED = make_schedule()
CFG = ModelConfig(num_classes=3, d_model=8, n_heads=2, n_layers=3, d_ff=16)


@pytest.fixture(scope="module")
def params():
    p = init_params(CFG, Rng(0))
    r = np.random.default_rng(1)
    for k, v in p.tensors.items():
        p.tensors[k] = v + 0.3 * r.normal(size=v.shape)
    return p


def vanilla(params, c, steps, rng, chains, n_points=16):
    x = initial_noise(rng, chains, n_points)
    ts = ddim_timesteps(SCHED.T, steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        x = ddim_step(x, predict_eps(params, x, t, c), t, t_prev, SCHED)
    return x


finite = st.floats(-1e3, 1e3)


class TestCombinator:
    def test_zero_scale(self):
        e, w = np.array([1.0, -2.0]), np.array([0.5, 3.0])
        assert np.array_equal(guided_epsilon(e, w, 0.0), e)

    def test_unit_scale_zero_weak(self):
        e = np.array([1.0, -2.0])
        np.testing.assert_array_equal(guided_epsilon(e, np.zeros(2), 1.0), 2 * e)

    def test_textbook_cfg(self):
        r = np.random.default_rng(0)
        ec, eu, w = r.normal(size=3), r.normal(size=3), 2.5
        np.testing.assert_allclose(guided_epsilon(ec, eu, w), eu + (1 + w) * (ec - eu), rtol=1e-14)

    def test_energy(self):
        e = np.array([0.3, 0.4])
        assert np.array_equal(guidance_energy(e, e), np.zeros(2))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            guided_epsilon(np.zeros(2), np.zeros(3), 1.0)
        with pytest.raises(DimensionError):
            guidance_energy(np.zeros(2), np.zeros(3))

    def test_negative_scale(self):
        with pytest.raises(InputError):
            guided_epsilon(np.zeros(2), np.zeros(2), -1.0)
        with pytest.raises(InputError):
            GuidanceSpec(s=-0.5)

    @given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite),
           st.floats(0, 10), st.floats(0, 10))
    @settings(max_examples=100, deadline=None)
    def test_linearity(self, e, w, s1, s2):
        lhs = guided_epsilon(e, w, s1 + s2)
        rhs = guided_epsilon(e, w, s1) + s2 * (e - w)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.abs(e).max() + np.abs(w).max()) * 20)

    @given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite), st.floats(0, 10))
    @settings(max_examples=100, deadline=None)
    def test_definitional(self, e, w, s):
        np.testing.assert_array_equal(guided_epsilon(e, w, s), e + s * guidance_energy(e, w))

    def test_cfg_with_dropped_class_is_unconditional(self):
        e = np.random.default_rng(1).normal(size=5)
        np.testing.assert_array_equal(guided_epsilon(e, e, 3.0), e)


class TestGuidanceSpec:
    def test_default_scales(self):
        assert default_scale("pag") == default_scale("seg") == 3.0
        assert default_scale("asag") == 1.5

    def test_unknown_method(self):
        with pytest.raises(InputError):
            GuidanceSpec("nope")


class TestSampling:
    @pytest.mark.parametrize("method", METHODS)
    def test_vanilla_reduction(self, params, method):
        c = 1 if method == "cfg" else None
        for seed in range(3):
            x, trace = asag_sample(params, SCHED, GuidanceSpec(method, s=0.0), c, 10, Rng(seed), chains=2)
            assert np.array_equal(x, vanilla(params, c, 10, Rng(seed), 2))
            assert len(trace) == 10

    def test_cfg_step_matches_textbook(self, params):
        x, _ = asag_sample(params, SCHED, GuidanceSpec("cfg", s=2.0), 1, 1, Rng(3), chains=2)
        xT = initial_noise(Rng(3), 2, 16)
        ec, eu = predict_eps(params, xT, 1000, 1), predict_eps(params, xT, 1000, NULL_CLASS)
        np.testing.assert_allclose(x, ddim_step(xT, eu + 3.0 * (ec - eu), 1000, 0, SCHED), rtol=1e-12)

    def test_perturbed_step_matches_manual(self, params):
        spec = GuidanceSpec("asag", s=1.5)
        x, trace = asag_sample(params, SCHED, spec, 2, 1, Rng(4), chains=2)
        xT = initial_noise(Rng(4), 2, 16)
        e = predict_eps(params, xT, 1000, 2)
        w = predict_eps(params, xT, 1000, 2, spec.attention_mode(), spec.layers)
        np.testing.assert_array_equal(x, ddim_step(xT, e + 1.5 * (e - w), 1000, 0, SCHED))
        np.testing.assert_allclose(trace.records[0].delta_norm,
                                   np.linalg.norm((e - w).reshape(2, -1), axis=1), rtol=1e-12)

    @pytest.mark.parametrize("composition", ["sequential", "additive"])
    def test_joint_cfg(self, params, composition):
        spec = GuidanceSpec("pag", s=2.0, cfg_scale=1.5, composition=composition)
        x, _ = asag_sample(params, SCHED, spec, 0, 1, Rng(5), chains=2)
        xT = initial_noise(Rng(5), 2, 16)
        mode = spec.attention_mode()
        ec, eu = predict_eps(params, xT, 1000, 0), predict_eps(params, xT, 1000, NULL_CLASS)
        wc = predict_eps(params, xT, 1000, 0, mode, spec.layers)
        wu = predict_eps(params, xT, 1000, NULL_CLASS, mode, spec.layers)
        base = guided_epsilon(ec, eu, 1.5)
        if composition == "sequential":
            delta = base - guided_epsilon(wc, wu, 1.5)
        else:
            delta = ec - wc
        np.testing.assert_allclose(x, ddim_step(xT, base + 2.0 * delta, 1000, 0, SCHED), rtol=1e-12, atol=1e-12)

    def test_trace_completeness(self, params):
        for method in METHODS:
            c = 0 if method == "cfg" else None
            _, trace = asag_sample(params, SCHED, GuidanceSpec(method, s=1.0), c, 6, Rng(6), chains=3)
            assert len(trace) == 6
            assert len(list(trace.rows())) == 18
            has_iters = any(r.iterations is not None for r in trace.records)
            assert has_iters == (method in ("asag", "sink"))

    def test_operating_point(self, params):
        spec = GuidanceSpec("asag", s=1.5)
        x, trace = asag_sample(params, SCHED, spec, None, 25, Rng(7), chains=2)
        assert len(trace) == 25 and np.all(np.isfinite(x))
        assert all(np.all(r.iterations <= spec.max_iters) for r in trace.records)
        norms = np.array([r.delta_norm for r in trace.records])
        assert np.all(np.isfinite(norms)) and norms.mean() > 0

    def test_cfg_needs_a_class(self, params):
        with pytest.raises(ContractError):
            asag_sample(params, SCHED, GuidanceSpec("cfg"), None, 5, Rng(0))
        with pytest.raises(ContractError):
            asag_sample(params, SCHED, GuidanceSpec("asag", cfg_scale=2.0), NULL_CLASS, 5, Rng(0))

    def test_cfg_needs_conditional_model(self):
        p = init_params(ModelConfig(num_classes=0, d_model=8, n_heads=2, n_layers=2, d_ff=16), Rng(0))
        with pytest.raises(ContractError):
            asag_sample(p, SCHED, GuidanceSpec("cfg"), 0, 5, Rng(0))

    def test_too_many_steps(self, params):
        with pytest.raises(ContractError):
            asag_sample(params, SCHED, GuidanceSpec(), None, 1001, Rng(0))

    def test_chains_are_independent_of_count(self, params):
        a, _ = asag_sample(params, SCHED, GuidanceSpec("seg"), None, 5, Rng(8), chains=1)
        b, _ = asag_sample(params, SCHED, GuidanceSpec("seg"), None, 5, Rng(8), chains=3)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)

    def test_nan_is_reported(self, params):
        bad = params.copy()
        bad.tensors["out.b"] = np.full(2, np.nan)
        with pytest.raises(FloatingPointError):
            asag_sample(bad, SCHED, GuidanceSpec("none"), None, 3, Rng(0))


class TestSweep:
    def _ref(self):
        return np.random.default_rng(0).normal(size=(300, 2)), np.zeros((1, 2))

    def test_zero_scale_is_vanilla(self, params):
        ref, centers = self._ref()
        rows = scale_sweep(params, SCHED, GuidanceSpec("asag"), [0.0], None, 5, Rng(9), ref, centers, 1.0,
                           chains=4)
        x = vanilla(params, None, 5, Rng(9), 4).reshape(-1, 2)
        assert rows[0]["energy_distance"] == energy_distance(x, ref)
        assert rows[0]["mode_coverage"] == mode_coverage(x, centers, 1.0)

    def test_rows_and_pairing(self, params):
        ref, centers = self._ref()
        rows = scale_sweep(params, SCHED, GuidanceSpec("asag"), [0.0, 1.5], None, 5, Rng(10), ref, centers, 1.0,
                           chains=3)
        assert [r["scale"] for r in rows] == [0.0, 1.5]
        assert set(rows[1]) == {"scale", "energy_distance", "mode_coverage", "mean_plan_entropy"}
        assert np.isfinite(rows[1]["mean_plan_entropy"])

    def test_empty(self, params):
        ref, centers = self._ref()
        with pytest.raises(InputError):
            scale_sweep(params, SCHED, GuidanceSpec(), [], None, 5, Rng(0), ref, centers, 1.0)
