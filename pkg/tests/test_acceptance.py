"""End-to-end acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line. The lines are repeated in the
pytest terminal summary, and ``python3 tests/test_acceptance.py`` runs just
this file.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from distill_lab import presets, rng as rng_mod
from distill_lab.config import parse_config
from distill_lab.distill import (DistillConfig, RunContext, ddim_reference, delta_for, grad_dsd,
                                 optimize_image, optimize_scene, sampling_times)
from distill_lab.harness import run_sweep
from distill_lab.metrics import mode_coverage, pairwise_diversity
from distill_lab.ode import OdeState, PathCache, ddim_forward, ddim_invert, ddim_step, x0_update
from distill_lab.oracle import Condition
from distill_lab.scene import seed_dispersion_study
from distill_lab.schedule import NoiseSchedule, TimeGrid, anneal_time, snap_to_ddim_grid

Y = presets.LABEL
RESULTS = []


def report(n: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_c01_sampling_dsd_equals_ddim():
    cfg = DistillConfig("SamplingDSD", n_steps=10, n_ddim=10, lr=1.0, t_min=0.0)
    start = time.perf_counter()
    worst = 0.0
    mixtures = presets.registered_mixtures()
    for o in mixtures.values():
        cache = PathCache(o)
        for i in range(20):
            f, _ = optimize_image(o, np.zeros(o.dim), Y, cfg, i, cache=cache)
            ref = ddim_reference(o, Y, cfg, i, cache=cache)
            worst = max(worst, np.linalg.norm(f - ref) / np.linalg.norm(ref))
    wall = time.perf_counter() - start
    report(1, len(mixtures) >= 3 and worst <= 1e-6 and wall < 1.0,
           f"max rel err {worst:.2e} (<= 1e-6) over {len(mixtures)} mixtures x 20 seeds, {wall:.2f} s (< 1 s)")


def _fd_eps(o, x, t, y, h=1e-4):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (o.log_marginal(x + e, t, y) - o.log_marginal(x - e, t, y)) / (2 * h)
    return -o.schedule.noise(t) * g


def test_c02_oracle_matches_score():
    rng = np.random.default_rng(2)
    oracles = list(presets.registered_mixtures().values())
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        o = oracles[rng.integers(len(oracles))]
        conds = o.conditions + [Condition.unconditional()]
        y = conds[rng.integers(len(conds))]
        t = rng.uniform(0.0, 1000.0)
        x = rng.normal(0.0, 2.5, o.dim)
        worst = max(worst, float(np.max(np.abs(o.eps_predict(x, t, y) - _fd_eps(o, x, t, y)))))
    wall = time.perf_counter() - start
    report(2, worst <= 1e-4 and wall < 1.0, f"max abs err {worst:.2e} (<= 1e-4) at 100 points, {wall:.2f} s (< 1 s)")


def test_c03_x_space_equals_x0_space():
    sch = NoiseSchedule()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        t, tn = sorted(rng.uniform(0.0, 1000.0, 2))[::-1]
        d = int(rng.integers(1, 4))
        x, e, en = rng.normal(0.0, 2.0, (3, d))
        x0 = x / sch.signal(t) - sch.sigma(t) * e
        xn = ddim_step(sch, OdeState(t, x), tn, e).x
        via_x = xn / sch.signal(tn) - sch.sigma(tn) * en
        worst = max(worst, float(np.max(np.abs(via_x - x0_update(sch, x0, en, e, tn)))))
    report(3, worst <= 1e-10, f"max abs err {worst:.2e} (<= 1e-10) over 1000 cases")


def test_c04_gaussian_fixed_point():
    o = presets.standard_gaussian(1)
    grid = TimeGrid.ddim(1000)
    worst = 0.0
    for i in range(50):
        s = rng_mod.prior_seed(0, i, 1)
        worst = max(worst, float(np.max(np.abs(ddim_forward(o, s, Y, 0.0, grid).final_state.x - s))))
    report(4, worst <= 1e-3, f"max |x0 - eps*| {worst:.2e} (<= 1e-3) on a 1000-step grid, 50 seeds")


def test_c05_inversion_round_trip():
    o = presets.symmetric_pair()
    mix = o.mixture(Y)
    grid = TimeGrid.ddim(1000)
    rng = np.random.default_rng(5)
    k = rng.choice(mix.n_components, 50, p=mix.weights)
    pts = mix.means[k] + mix.scales[k, None] * rng.standard_normal((50, o.dim))
    errs = []
    for p in pts:
        z = ddim_invert(o, p, Y, 1000.0, grid).final_state.x
        errs.append(float(np.max(np.abs(ddim_forward(o, z, Y, 0.0, grid).final_state.x - p))))
    worst = max(errs)
    report(5, worst <= 1e-3, f"max round-trip err {worst:.2e} (<= 1e-3), median {np.median(errs):.1e}, 50 points")


def test_c06_two_mode_diversity():
    o = presets.two_mode_benchmark()
    modes = o.mixture(Y).means
    tau = 2.0 * float(o.mixture(Y).scales.min())
    start = time.perf_counter()
    cache = PathCache(o, capacity=256)
    div, at_mode = {}, None
    for v in ("SDS", "ASD", "SDI", "Consistent3D", "DSD"):
        cfg = presets.BENCHMARK_DISTILL.with_(variant=v)
        xs = np.array([optimize_image(o, np.zeros(1), Y, cfg, i, cache=cache)[0] for i in range(100)])
        div[v] = pairwise_diversity(xs)
        if v == "DSD":
            d = np.linalg.norm(xs[:, None, :] - modes[None], axis=2)
            at_mode = [float(np.mean(d[:, k] <= tau)) for k in range(len(modes))]
    wall = time.perf_counter() - start
    others = max(val for k, val in div.items() if k != "DSD")
    ok = (min(at_mode) >= 0.3 and div["DSD"] >= 2 * div["SDS"] and div["DSD"] > others and wall < 60)
    report(6, ok, "DSD fraction at modes " + "/".join(f"{f:.2f}" for f in at_mode)
           + " (>= 0.30); diversity " + ", ".join(f"{k} {val:.3f}" for k, val in div.items())
           + f"; {wall:.1f} s (< 60 s)")


def test_c07_scene_coverage():
    scene = presets.standard_scene(0)
    o = scene.oracle(NoiseSchedule())
    tau = 10.0 * scene.library.scale
    start = time.perf_counter()
    cache = PathCache(o, capacity=512)
    cov = {}
    for v in ("SDS", "DSD"):
        cfg = presets.SCENE_DISTILL.with_(variant=v)
        xs = np.array([optimize_scene(o, scene, cfg, i, cache=cache)[0] for i in range(50)])
        cov[v] = mode_coverage(xs, scene.library.objects, tau)
    wall = time.perf_counter() - start
    report(7, cov["DSD"] >= 2 and cov["SDS"] == 1 and wall < 120,
           f"coverage DSD {cov['DSD']} (>= 2), SDS {cov['SDS']} (== 1), tau {tau:g}, {wall:.1f} s (< 120 s)")


def test_c08_correction_mechanism():
    o = presets.two_mode_benchmark()
    sch = o.schedule
    rng = np.random.default_rng(8)
    cache = PathCache(o, capacity=256)

    # without correction: the gradient ignores the image entirely
    scfg = presets.BENCHMARK_DISTILL.with_(variant="SamplingDSD")
    invariant = True
    for i in range(20):
        ctx = RunContext(o, scfg, i, 0, cache, 1)
        t = ctx.time(int(rng.integers(1, scfg.n_steps + 1)))
        g0 = ctx.grad(np.zeros(1), t, Y).grad
        for _ in range(5):
            invariant &= bool(np.array_equal(ctx.grad(rng.normal(0, 3, 1), t, Y).grad, g0))

    # with correction: a perturbed image is pulled toward the trajectory's next clean estimate
    cfg = presets.BENCHMARK_DISTILL.with_(variant="DSD")
    grid = TimeGrid.ddim(cfg.n_ddim, sch.T)
    hits = 0
    for j in range(1000):
        ctx = RunContext(o, cfg, j, 0, cache, 1)
        t = anneal_time(int(rng.integers(1, cfg.n_steps + 1)), cfg.n_steps, sch.T, cfg.t_min)
        path = ctx.path(Y)
        t_hi = snap_to_ddim_grid(min(t + delta_for(t, cfg, sch.T), sch.T), grid)
        t_lo = sampling_times(t, grid)[0]
        path.extend_to(t_lo)
        x_pi = path.x0_at(t_hi) + 0.1 * rng.standard_normal(1)
        g = grad_dsd(o, x_pi, t, Y, path, cfg).grad
        hits += float(-g @ (path.x0_at(t_lo) - x_pi)) > 0
    frac = hits / 1000
    report(8, invariant and frac >= 0.95,
           f"sampling rule image-invariant: {invariant}; DSD pull-back agreement {frac:.3f} (>= 0.95) "
           "over 1000 perturbations")


def test_c09_seed_dispersion():
    ratios = []
    for seed in range(3):
        scene = presets.standard_scene(seed)
        ratios.append(seed_dispersion_study(scene.oracle(NoiseSchedule()), scene, TimeGrid.ddim(10)))
    report(9, all(r < 1.0 for r in ratios),
           "dispersion ratios " + ", ".join(f"{r:.3f}" for r in ratios) + " (< 1) over 3 libraries")


def test_c10_determinism(small_cfg_text, tmp_path):
    cfg = parse_config(small_cfg_text)
    run_sweep(cfg, "2d", tmp_path / "p1", parallel=1)
    run_sweep(cfg, "2d", tmp_path / "p8", parallel=8)
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text(small_cfg_text)
    for name in ("inv1", "inv2"):
        subprocess.run([sys.executable, "-m", "distill_lab.cli", "distill2d", "--config", str(cfg_file),
                        "--out", str(tmp_path / name)], check=True)
    blobs = [(tmp_path / d / "finals.csv").read_bytes() for d in ("p1", "p8", "inv1", "inv2")]
    same_par, same_inv = blobs[0] == blobs[1], blobs[2] == blobs[3]
    report(10, same_par and same_inv and blobs[0] == blobs[2],
           f"finals.csv identical across parallel 1/8: {same_par}; across two invocations: {same_inv}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
