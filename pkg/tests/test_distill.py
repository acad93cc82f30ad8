import math

import numpy as np
import pytest

from distill_lab import presets, rng as rng_mod
from distill_lab.distill import (VARIANTS, DistillConfig, DivergenceError, GradReport, RunContext,
                                 ddim_reference, delta_for, grad_asd, grad_consistent3d, grad_dsd,
                                 grad_sampling_dsd, grad_sdi, grad_sds, optimize_image, sampling_times,
                                 weight)
from distill_lab.metrics import pairwise_diversity
from distill_lab.ode import PathCache, ddim_forward
from distill_lab.oracle import Condition, DiffusionOracle, GaussianMixture
from distill_lab.schedule import TimeGrid

Y = Condition.label(0)
G10 = TimeGrid.ddim(10)
CFG1 = dict(cfg_low=1.0, cfg_high=1.0, cfg_path=1.0)


@pytest.fixture(scope="module")
def delta(schedule):
    mu = np.array([0.8, -0.5])
    return DiffusionOracle(schedule, {Y: GaussianMixture([1.0], [mu], [1e-8])}), mu


def finals(oracle, cfg, n=100, x_init=None):
    x0 = np.zeros(oracle.dim) if x_init is None else x_init
    cache = PathCache(oracle, 256)
    return np.array([optimize_image(oracle, x0, Y, cfg, i, cache=cache)[0] for i in range(n)])


class TestConfig:
    def test_defaults(self):
        c = DistillConfig()
        assert (c.n_steps, c.n_ddim, c.cfg_low, c.cfg_high, c.cfg_path) == (100, 10, 7.5, 1.0, 7.5)
        assert c.step_size == 0.1
        assert c.with_(lr=0.5).step_size == 0.5
        assert c.as_dict()["variant"] == "DSD"

    @pytest.mark.parametrize("bad", [dict(variant="VSD"), dict(n_steps=0), dict(n_ddim=0), dict(t_min=-1),
                                     dict(delta_rule="x"), dict(w_rule="x"), dict(interp="x"),
                                     dict(cfg_low=-1.0), dict(lr=0.0), dict(delta_frac=-0.1),
                                     dict(diverge_limit=0.0)])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            DistillConfig(**bad)

    def test_weight_and_delta(self, schedule):
        assert weight(schedule, 300.0, "sigma_low") == schedule.sigma(300.0)
        assert weight(schedule, 300.0, "one") == 1.0
        c = DistillConfig()
        assert math.isclose(delta_for(520.0, c, 1000.0), 50.0)
        assert delta_for(10.0, c, 1000.0) == 0.0
        assert delta_for(520.0, c.with_(delta_rule="ddim"), 1000.0) == 100.0


class TestSDS:
    def test_fixed_point(self, delta, rng):
        o, mu = delta
        noise = rng.normal(size=2)
        rep = grad_sds(o, mu, 400.0, Y, noise, DistillConfig(**CFG1))
        assert np.allclose(rep.grad, 0.0, atol=1e-6)
        assert isinstance(rep, GradReport) and rep.grad.shape == (2,)

    def test_delta_posterior_direction(self, delta, schedule):
        o, mu = delta
        x, t = np.array([1.5, 0.5]), 300.0
        a = schedule.alpha_bar(t)
        rep = grad_sds(o, x, t, Y, np.zeros(2), DistillConfig(w_rule="one", **CFG1))
        assert np.allclose(rep.grad, math.sqrt(a) * (x - mu) / math.sqrt(1 - a), rtol=1e-6)

    def test_variance_exceeds_dsd(self, bench):
        cfg = presets.BENCHMARK_DISTILL
        r = np.random.default_rng(0)
        x, t = np.zeros(1), 500.0
        sds = [grad_sds(bench, x, t, Y, r.standard_normal(1), cfg).grad[0] for _ in range(1000)]
        cache = PathCache(bench, 1000)
        dsd = [grad_dsd(bench, x, t, Y, cache.path(rng_mod.prior_seed(0, i, 1), Y, G10, cfg.cfg_path), cfg).grad[0]
               for i in range(1000)]
        assert np.std(sds) >= 3 * np.std(dsd)

    def test_mode_seeking(self, bench):
        # plain conditional guidance: the smoothed target has its mode at the mixture mean
        f = finals(bench, DistillConfig("SDS", **CFG1))
        assert np.mean(np.abs(f[:, 0]) <= 0.5) >= 0.8


class TestASD:
    def test_near_delta_cancels(self, delta, rng):
        o, mu = delta
        rep = grad_asd(o, mu, 400.0, Y, rng.normal(size=2), DistillConfig(**CFG1))
        assert np.allclose(rep.grad, 0.0, atol=1e-6)
        assert rep.t_high == 438.0

    def test_zero_delta_is_exact_zero(self, three, rng):
        rep = grad_asd(three, rng.normal(size=2), 400.0, Y, rng.normal(size=2),
                       DistillConfig(delta_frac=0.0, **CFG1))
        assert np.array_equal(rep.grad, np.zeros(2))

    def test_draw_contract(self, three):
        x, c = np.array([0.2, 0.1]), DistillConfig(**CFG1)
        a = grad_asd(three, x, 500.0, Y, np.array([0.3, -0.3]), c).grad
        b = grad_asd(three, x, 500.0, Y, np.array([-1.0, 0.7]), c).grad
        assert not np.allclose(a, b)
        assert np.array_equal(a, grad_asd(three, x, 500.0, Y, np.array([0.3, -0.3]), c).grad)


class TestSDI:
    def test_mode_is_stationary_late(self, pair):
        # a sharp mode is where the ODE's x0 prediction sits once the noise level is moderate
        c = DistillConfig("SDI", **CFG1)
        for mu in pair.mixture(Y).means:
            for t in np.linspace(20, 500, 25):
                assert np.abs(grad_sdi(pair, mu, t, Y, c, G10).grad).max() <= 1e-2

    def test_deterministic(self, bench):
        c = presets.BENCHMARK_DISTILL
        a = grad_sdi(bench, np.array([0.7]), 350.0, Y, c, G10)
        b = grad_sdi(bench, np.array([0.7]), 350.0, Y, c, G10)
        assert np.array_equal(a.aux["x_inverted"], b.aux["x_inverted"])
        assert np.array_equal(a.grad, b.grad)

    def test_no_diversity(self, bench):
        c = presets.BENCHMARK_DISTILL
        sdi = finals(bench, c.with_(variant="SDI"), n=50)
        dsd = finals(bench, c.with_(variant="DSD"), n=50)
        assert len(np.unique(np.round(sdi, 6))) <= 2
        assert pairwise_diversity(sdi) <= 0.5 * pairwise_diversity(dsd)


class TestConsistent3D:
    def test_fixed_point(self, delta, rng):
        o, mu = delta
        e = rng.normal(size=2)
        assert np.allclose(grad_consistent3d(o, mu, 600.0, Y, e, DistillConfig(**CFG1)).grad, 0, atol=1e-6)

    def test_seeds_give_distinct_endpoints(self, bench):
        f = finals(bench, presets.BENCHMARK_DISTILL.with_(variant="Consistent3D"), n=30)
        assert len(np.unique(np.round(f, 9))) == 30
        assert pairwise_diversity(f) > 0.5

    @staticmethod
    def _mode_gap(oracle, f):
        return float(np.mean(np.min(np.abs(f - oracle.mixture(Y).means[:, 0]), axis=1)))

    @pytest.mark.xfail(strict=True, reason="measured ratio is about 1.9, short of 2")
    def test_unguided_fidelity_gap(self, bench):
        dsd = finals(bench, presets.BENCHMARK_DISTILL)
        c3d = finals(bench, DistillConfig("Consistent3D", **CFG1))
        assert self._mode_gap(bench, c3d) >= 2 * self._mode_gap(bench, dsd)


class TestSamplingDSD:
    def test_sampling_times(self):
        assert sampling_times(850.0, G10) == (800.0, 900.0)
        assert sampling_times(800.0, G10) == (800.0, 900.0)
        assert sampling_times(20.0, G10) == (0.0, 100.0)
        with pytest.raises(ValueError):
            sampling_times(1000.0, G10)

    def test_gradient_is_scaled_eps_difference(self, three):
        c = DistillConfig("SamplingDSD", **CFG1)
        p = ddim_forward(three, rng_mod.prior_seed(0, 0, 2), Y, 0.0, G10)
        rep = grad_sampling_dsd(three, 450.0, Y, p, c)
        assert np.array_equal(rep.grad, three.schedule.sigma(400.0) * (p.eps_at(400.0) - p.eps_at(500.0)))

    def test_stationary_predictor(self, delta):
        o, _ = delta
        p = ddim_forward(o, np.array([0.3, 1.1]), Y, 0.0, G10)
        for t in [900.0, 500.0, 100.0]:
            assert np.allclose(grad_sampling_dsd(o, t, Y, p, DistillConfig(**CFG1)).grad, 0, atol=1e-6)

    def test_condition_mismatch(self, bench):
        p = ddim_forward(bench, [0.1], Y, 0.0, G10)
        with pytest.raises(ValueError):
            grad_sampling_dsd(bench, 500.0, "label:background", p, DistillConfig())

    @pytest.mark.parametrize("name", list(presets.registered_mixtures()))
    def test_equals_ddim(self, name):
        o = presets.registered_mixtures()[name]
        c = DistillConfig("SamplingDSD", n_steps=10, n_ddim=10, lr=1.0, t_min=0.0)
        for i in range(5):
            f, trace = optimize_image(o, np.zeros(o.dim), Y, c, i)
            ref = ddim_reference(o, Y, c, i)
            assert np.linalg.norm(f - ref) <= 1e-6 * np.linalg.norm(ref)
            assert len(trace) == 10

    def test_repeated_steps_equal_ddim(self, three):
        c = DistillConfig("SamplingDSD", n_steps=100, n_ddim=10, t_min=0.0)
        for i in range(3):
            f, _ = optimize_image(three, np.zeros(2), Y, c, i)
            ref = ddim_reference(three, Y, c, i)
            assert np.linalg.norm(f - ref) <= 1e-9 * np.linalg.norm(ref)

    def test_gaussian_converges_to_seed(self, schedule):
        o = presets.standard_gaussian(2)
        c = DistillConfig("SamplingDSD", n_steps=1000, n_ddim=1000, lr=1.0, t_min=0.0, **CFG1)
        for i in range(5):
            seed = rng_mod.prior_seed(0, i, 2)
            a, _ = optimize_image(o, np.zeros(2), Y, c, i)
            b, _ = optimize_image(o, np.array([5.0, -4.0]), Y, c, i)
            assert np.array_equal(a, b)
            # first-order grid error is about pi^2 / (8N) relative
            assert np.linalg.norm(a - seed) <= 1.5e-3 * np.linalg.norm(seed)


class TestDSD:
    def test_stationary_predictor_idle(self, delta):
        o, mu = delta
        p = ddim_forward(o, np.array([0.3, 1.1]), Y, 0.0, G10)
        for t in [850.0, 520.0, 130.0]:
            t_hi = grad_dsd(o, mu, t, Y, p, DistillConfig(**CFG1)).t_high
            x0 = o.posterior_x0(p.x_at(t_hi), t_hi, Y)
            assert np.abs(grad_dsd(o, x0, t, Y, p, DistillConfig(**CFG1)).grad).max() <= 1e-2

    def test_interpolation_matches_definition(self, three, schedule):
        c = DistillConfig(cfg_low=3.0, cfg_high=1.5, cfg_path=2.0)
        p = PathCache(three).path(rng_mod.prior_seed(0, 4, 2), Y, G10, 2.0)
        x, t = np.array([0.4, -0.9]), 430.0
        rep = grad_dsd(three, x, t, Y, p, c)
        assert rep.t_high == 500.0
        e = p.extend_to(500.0).eps_at(500.0)
        x_hi = schedule.signal(500.0) * x + schedule.noise(500.0) * e
        x_lo = schedule.signal(t) * x + schedule.noise(t) * e
        want = schedule.sigma(t) * (three.eps_predict(x_lo, t, Y, 3.0) - three.eps_predict(x_hi, 500.0, Y, 1.5))
        assert np.allclose(rep.grad, want, rtol=1e-13, atol=1e-15)
        lit = grad_dsd(three, x, t, Y, p, c.with_(interp="literal", w_rule="one"))
        x_lit = schedule.signal(t) * x + schedule.noise(500.0) * e
        assert np.allclose(lit.eps_low, three.eps_predict(x_lit, t, Y, 3.0), rtol=1e-13)

    def test_depends_on_image(self, bench):
        c = presets.BENCHMARK_DISTILL
        p = ddim_forward(bench, rng_mod.prior_seed(0, 0, 1), Y, 0.0, G10, 7.5)
        a = grad_dsd(bench, np.array([0.1]), 400.0, Y, p, c).grad
        b = grad_dsd(bench, np.array([0.9]), 400.0, Y, p, c).grad
        assert not np.allclose(a, b)

    def test_dimension_check(self, three):
        p = ddim_forward(three, [0.1, 0.2], Y, 0.0, G10)
        with pytest.raises(ValueError):
            grad_dsd(three, np.zeros(3), 500.0, Y, p, DistillConfig())

    def test_follows_ddim(self, pair):
        c = DistillConfig(delta_rule="ddim", **CFG1)
        cache = PathCache(pair, 256)
        for i in range(100):
            f, _ = optimize_image(pair, np.zeros(1), Y, c, i, cache=cache)
            assert abs(f - ddim_reference(pair, Y, c, i, cache=cache)).max() <= 0.15


class TestRunContext:
    def test_sampling_dsd_ignores_image(self, bench, rng):
        ctx = RunContext(bench, DistillConfig("SamplingDSD"), 3, 0, None, 1)
        base = ctx.grad(np.zeros(1), 430.0, Y).grad
        for _ in range(100):
            assert np.array_equal(ctx.grad(rng.normal(0, 3, 1), 430.0, Y).grad, base)

    def test_sds_times_are_uniform(self, pair):
        ctx = RunContext(pair, DistillConfig("SDS", t_min=20.0), 0, 0, None, 1)
        ts = np.array([ctx.time(i) for i in range(1, 2001)])
        assert ts.min() >= 20.0 and ts.max() <= 1000.0
        assert abs(ts.mean() - 510.0) < 20.0

    def test_annealed_times(self, pair):
        ctx = RunContext(pair, DistillConfig("DSD", n_steps=10, t_min=20.0), 0, 0, None, 1)
        assert [ctx.time(i) for i in range(1, 11)] == [900.0, 800.0, 700.0, 600.0, 500.0, 400.0,
                                                      300.0, 200.0, 100.0, 20.0]

    def test_seed_shared_across_variants(self, pair):
        a = RunContext(pair, DistillConfig("DSD"), 5, 0, None, 1).eps_star
        b = RunContext(pair, DistillConfig("Consistent3D"), 5, 0, None, 1).eps_star
        assert np.array_equal(a, b)


class TestOptimizeImage:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_deterministic_per_seed(self, bench, variant):
        c = presets.BENCHMARK_DISTILL.with_(variant=variant, n_steps=30)
        a, ta = optimize_image(bench, np.zeros(1), Y, c, 7)
        b, tb = optimize_image(bench, np.zeros(1), Y, c, 7)
        assert np.array_equal(a, b) and np.array_equal(ta, tb)
        assert ta.shape == (30, 4)
        assert np.array_equal(ta[-1, 3:], a)
        assert list(ta[:, 0]) == list(range(1, 31))

    def test_divergence_aborts(self, bench):
        c = presets.BENCHMARK_DISTILL.with_(variant="SDS", lr=1e4, diverge_limit=1e3)
        with pytest.raises(DivergenceError) as info:
            optimize_image(bench, np.zeros(1), Y, c, 0)
        assert info.value.step >= 1 and info.value.norm > 1e3

    def test_dimension_check(self, bench):
        with pytest.raises(ValueError):
            optimize_image(bench, np.zeros(2), Y, DistillConfig(), 0)
