"""Acceptance gate: one test per headline requirement, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are printed
even when output capture is on.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from gptrace import kernels
from gptrace.evaluation import run_case, run_dijkstra, trace_jaccard
from gptrace.gp_core import (
    KernelSpec,
    NoiseModel,
    ObservationSet,
    log_marginal_likelihood,
    optimize_hyperparameters,
    posterior,
    sample_posterior,
)
from gptrace.image import GradientField, make_sinusoid_case
from gptrace.tracer import EdgeTracer, TraceConfig, n_bins, trace_sequence
from oracles import bellman_ford, explicit_posterior, rel_err

SEEDS = (0, 1, 2, 3, 4)
BASE = TraceConfig(kernel=KernelSpec("matern", nu=2.5))


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return emit


@pytest.fixture(scope="module")
def case():
    return make_sinusoid_case()


def _runs(config, case):
    out = []
    for seed in SEEDS:
        j, t, res = run_case(replace(config, seed=seed), case)
        out.append((j, t, res))
    return out


@pytest.fixture(scope="module")
def baseline(case):
    return _runs(BASE, case)


def _median(runs):
    return float(np.median([j for j, _, _ in runs]))


# ---------------------------------------------------------------------------------

def test_gp_oracle_equivalence(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        m = int(rng.integers(2, 9))
        family = "se" if k % 2 else "matern"
        spec = KernelSpec(family, float(rng.uniform(1, 100) ** 2), float(rng.uniform(2, 40)), nu=[1.5, 2.5][k % 3 % 2])
        x = np.sort(rng.choice(200, size=m, replace=False)).astype(float)
        y = rng.uniform(-50, 50, m)
        noise = rng.uniform(1e-3, 4.0, m)
        xstar = np.arange(200, dtype=float)
        ppd = posterior(ObservationSet(x, y), NoiseModel(noise), spec, xstar)
        mu, cov = explicit_posterior(spec, x, y, noise, xstar, ppd.jitter)
        worst = max(worst, rel_err(ppd.mean, mu), rel_err(ppd.cov, cov))

    # iterated refit inside the tracer: every refit after a step must match the oracle
    small = make_sinusoid_case(M=120, N=150, amplitude=20, periods=2, noise_level=0.1, occlusion_spans=())
    cfg = TraceConfig(kernel=KernelSpec(signal_variance=30.0**2, lengthscale=20.0), curves=100)
    tr = EdgeTracer(cfg, small.gradient, list(small.endpoints()))
    refits = 0
    for _ in range(4):
        if tr.complete:
            break
        rec = tr.step()
        if rec.stalled:
            continue
        obs = tr.observations
        mu, cov = explicit_posterior(
            cfg.kernel, obs.x, obs.y - tr.prior_mean, tr.noise.per_point_variance, tr.xstar, tr.ppd.jitter
        )
        worst = max(worst, rel_err(tr.ppd.mean, mu + tr.prior_mean), rel_err(tr.ppd.cov, cov))
        refits += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 1.0 and refits > 0
    verdict("GP oracle equivalence", ok, f"max rel err {worst:.2e} over 50 instances + {refits} refits, {elapsed:.2f}s")


def test_lml_gradient(verdict):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        m = int(rng.integers(3, 12))
        x = np.sort(rng.choice(100, size=m, replace=False)).astype(float)
        y = rng.normal(0, 10, m)
        theta = np.array([rng.uniform(20, 400), rng.uniform(3, 30), rng.uniform(0.1, 5)])
        family = "matern" if k % 2 else "se"

        def f(t):
            spec = KernelSpec(family, t[0], t[1], nu=2.5)
            return log_marginal_likelihood(ObservationSet(x, y), NoiseModel.uniform(t[2], m), spec)

        g = f(theta).gradient
        fd = np.empty(3)
        for i in range(3):
            h = 1e-5 * theta[i]
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (f(up).value - f(dn).value) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 1.0
    verdict("LML gradient check", ok, f"max rel err {worst:.2e} on 20 instances, {elapsed:.2f}s")


def test_prior_calibration(verdict):
    n = 720
    spec = KernelSpec("se", 75.0**2, 20.0)
    init = ObservationSet(np.array([0.0, n - 1.0]), np.array([250.0, 250.0]))
    ppd = posterior(init, NoiseModel.uniform(1.0, 2), spec, np.arange(n, dtype=float))
    half = 1.96 * math.sqrt(ppd.variance[n // 2])
    width_err = abs(half - 2 * 75.0) / (2 * 75.0)
    draws = sample_posterior(ppd, 10_000, seed=5)
    var = draws.var(axis=0, ddof=1)
    var_err = float(np.max(np.abs(var - ppd.variance) / ppd.variance))
    ok = width_err <= 0.05 and var_err <= 0.05
    verdict("Prior sampling calibration", ok,
            f"half-width {half:.1f} vs 2*sigma_f=150 ({100 * width_err:.1f}%), max variance err {100 * var_err:.2f}%")


def test_sinusoid_end_to_end(verdict, baseline):
    med = _median(baseline)
    times = [t for _, t, _ in baseline]
    detail = (f"median jaccard {med:.4f} over seeds {list(SEEDS)} "
              f"(per seed {[round(j, 4) for j, _, _ in baseline]}); runtime {min(times):.1f}-{max(times):.1f}s "
              f"[{kernels.BACKEND} kernels]")
    verdict("Sinusoid end-to-end", med >= 0.95 and max(times) <= 120, detail)


def test_dijkstra_below_proposed(verdict, case, baseline):
    j_dk, t_dk, _ = run_dijkstra(case)
    med = _median(baseline)
    verdict("Baseline ordering", j_dk < med, f"dijkstra {j_dk:.4f} ({t_dk:.2f}s) < proposed {med:.4f}")


def test_convergence_bookkeeping(verdict, case, baseline):
    m, n = case.shape
    nb = n_bins(n, BASE.bin_width)
    problems = []
    for seed, (_, _, res) in zip(SEEDS, baseline):
        bins = (res.observations.x // BASE.bin_width).astype(int)
        if not res.converged or len(res.observations) != nb or np.unique(bins).size != nb:
            problems.append(f"seed {seed}: {len(res.observations)}/{nb} bins")
        if res.mean.shape != (n,) or not np.all(np.isfinite(res.mean)):
            problems.append(f"seed {seed}: output not one finite height per column")
        if not np.all((res.lower <= res.mean) & (res.mean <= res.upper)):
            problems.append(f"seed {seed}: band does not bracket the mean")

    # noise-free dense fits drive the noise estimate down
    noise_hat = []
    rng = np.random.default_rng(8)
    for k in range(5):
        x = np.arange(0.0, 200.0, 2.0)
        y = 30 * np.sin(x / rng.uniform(12, 25) + k) + 10 * np.cos(x / 40.0)
        res = optimize_hyperparameters(ObservationSet(x, y), NoiseModel.uniform(1.0, x.size), KernelSpec(), seed=k)
        noise_hat.append(res.noise.shared_variance())
    if max(noise_hat) >= 1e-2:
        problems.append(f"noise-free fits gave sigma_y^2 up to {max(noise_hat):.2e}")
    detail = "; ".join(problems) if problems else (
        f"{nb}/{nb} bins on all seeds, injective output, max sigma_y^2 on noise-free fits {max(noise_hat):.1e}")
    verdict("Convergence bookkeeping", not problems, detail)


def test_decoy_discarded(verdict, case):
    cfg = replace(BASE, seed=0)
    tr = EdgeTracer(cfg, case.gradient, list(case.endpoints()))
    tr.step()
    # plant a pixel 40 rows off the edge in a clean region, as if it had scored highly
    col = 102
    row = float(round(case.truth[col]) + 40)
    obs, noise = tr.observations, tr.noise
    keep = (obs.x // cfg.bin_width) != col // cfg.bin_width
    x = np.append(obs.x[keep], col)
    y = np.append(obs.y[keep], row)
    v = np.append(noise.per_point_variance[keep], cfg.noise_variance)
    order = np.argsort(x)
    tr.observations = ObservationSet(x[order], y[order])
    tr.noise = NoiseModel(v[order])
    tr.ppd = tr._fit()
    res = tr.run()
    still = np.any((res.observations.x == col) & (res.observations.y == row))
    err = abs(res.mean[col] - case.truth[col])
    verdict("Discard behaviour", (not still) and err <= 2.0,
            f"decoy at (col {col}, row {row:.0f}) {'kept' if still else 'removed'}; final error at that column {err:.2f}px")


def test_sequence_speedup(verdict, case):
    frames = trace_sequence(BASE, [case.gradient, case.gradient], list(case.endpoints()), stride=4)
    a, b = frames[0].result, frames[1].result
    if a is None or b is None:
        verdict("Sequence speedup", False, "a frame failed")
    gap = float(np.max(np.abs(a.mean - b.mean)))
    ok = b.iterations < a.iterations and gap <= 1.0
    verdict("Sequence speedup", ok,
            f"iterations {a.iterations} (endpoints) -> {b.iterations} (propagated), max mean gap {gap:.2f}px")


def test_sensitivity_smoke(verdict, case, baseline):
    base = _median(baseline)
    meds = {}
    for label, cfg in [
        ("L=100", replace(BASE, curves=100)),
        ("L=1000", replace(BASE, curves=1000)),
        ("eps=0.05", replace(BASE, keep_ratio=0.05)),
        ("eps=0.5", replace(BASE, keep_ratio=0.5)),
        ("ell=60", replace(BASE, kernel=replace(BASE.kernel, lengthscale=60.0))),
    ]:
        meds[label] = _median(_runs(cfg, case))
    spread_l = abs(meds["L=100"] - meds["L=1000"])
    spread_e = abs(meds["eps=0.05"] - meds["eps=0.5"])
    drop = base - meds["ell=60"]
    ok = spread_l < 0.02 and spread_e < 0.02 and drop >= 0.02
    detail = (f"baseline (ell=20) {base:.4f}; " + ", ".join(f"{k} {v:.4f}" for k, v in meds.items())
              + f"; L spread {100 * spread_l:.2f} pts, eps spread {100 * spread_e:.2f} pts, "
              f"ell=60 drop {100 * drop:.2f} pts (need >= 2)")
    verdict("Sensitivity smoke test", ok, detail)


def test_dijkstra_optimality(verdict):
    rng = np.random.default_rng(99)
    mismatches = 0
    for _ in range(25):
        m, n = (int(v) for v in rng.integers(2, 16, size=2))
        g = GradientField(rng.random((m, n)))
        cost = 1.0 - g.values + 1e-3
        start = (int(rng.integers(m)), int(rng.integers(n)))
        end = (int(rng.integers(m)), int(rng.integers(n)))
        _, total = kernels.dijkstra(cost, start, end)
        if total != bellman_ford(cost, start, end):
            mismatches += 1
    verdict("Dijkstra optimality", mismatches == 0, f"{25 - mismatches}/25 grids exactly equal to brute force")
