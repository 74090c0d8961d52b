import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gptrace.evaluation import trace_jaccard
from gptrace.exceptions import ConfigurationError, LostEdgeError
from gptrace.gp_core import KernelSpec, NoiseModel, ObservationSet, posterior, sample_posterior
from gptrace.image import GradientField, gradient_magnitude, make_sinusoid_case
from gptrace.tracer import (
    EdgeTracer,
    FrequencyDensity,
    TraceConfig,
    accept_discard,
    build_density,
    n_bins,
    propagate,
    score_curve,
    score_curves,
    score_pixels,
    select_optimal,
    simpson_weights,
    trace,
    trace_sequence,
)


# -- quadrature and curve scores ------------------------------------------------

@pytest.mark.parametrize("n", [3, 4, 5, 8, 11, 50, 51])
def test_simpson_exact_for_quadratics(n):
    x = np.arange(n, dtype=float)
    f = 2.0 - 0.3 * x + 0.07 * x**2
    b = n - 1
    exact = 2.0 * b - 0.15 * b**2 + 0.07 * b**3 / 3
    assert simpson_weights(n) @ f == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("n", [5, 9, 101])
def test_simpson_exact_for_cubics_odd(n):
    x = np.arange(n, dtype=float)
    b = n - 1
    assert simpson_weights(n) @ (x**3) == pytest.approx(b**4 / 4, rel=1e-12)


def test_score_constant_row():
    g = GradientField(np.ones((20, 30)))
    assert score_curve(np.full(30, 10.0), g) == pytest.approx(1.0)


def test_score_outside_image():
    g = GradientField(np.ones((20, 30)))
    assert score_curve(np.full(30, -5.0), g) == 0.0
    assert score_curve(np.full(30, 40.0), g) == 0.0


def test_score_half_columns():
    v = np.zeros((40, 101))
    v[:, :50] = 1.0
    curve = 5.0 + 0.2 * np.arange(101)  # straight, slanted line
    assert score_curve(curve, GradientField(v)) == pytest.approx(0.5, abs=1e-2)


def test_score_needs_three_samples():
    with pytest.raises(ConfigurationError):
        score_curve([1.0, 2.0], GradientField(np.ones((3, 2))))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_scores_bounded(seed):
    rng = np.random.default_rng(seed)
    g = GradientField.from_array(rng.random((30, 25)))
    curves = rng.uniform(-5, 35, (6, 25))
    s = score_curves(curves, g)
    assert np.all((s >= 0) & (s <= 1 + 1e-12))


def test_curve_touching_gradient_scores_positive():
    v = np.zeros((20, 20))
    v[10, 10] = 1.0
    assert score_curve(np.full(20, 10.0), GradientField(v)) > 0


# -- optimal selection ------------------------------------------------------------

def test_select_keep_all():
    curves = np.arange(12.0).reshape(4, 3)
    kept, scores, idx = select_optimal(curves, [0.1, 0.4, 0.2, 0.3], 1.0)
    assert idx.tolist() == [1, 3, 2, 0]
    assert kept.shape == (4, 3)


def test_select_top_half():
    curves = np.arange(12.0).reshape(4, 3)
    _, scores, idx = select_optimal(curves, [1, 2, 3, 4], 0.5)
    assert scores.tolist() == [4, 3]
    assert idx.tolist() == [3, 2]


def test_select_ties_by_index():
    _, _, idx = select_optimal(np.zeros((5, 3)), np.full(5, 0.7), 0.4)
    assert idx.tolist() == [0, 1]


def test_select_lost_edge():
    with pytest.raises(LostEdgeError):
        select_optimal(np.zeros((3, 4)), np.zeros(3), 0.5)


# -- density ------------------------------------------------------------------

def test_density_single_point_peak_and_neighbourhood():
    from gptrace import kernels

    d = build_density(np.array([[20.0]]), [1.0], 41, 1)
    assert d.grid.argmax() == 20 and d.grid.max() == 1.0
    g = np.zeros((41, 41))
    kernels.deposit(g, np.array([20.0]), np.array([20.0]), np.array([1.0]), 1.0, 4.0)
    assert np.unravel_index(g.argmax(), g.shape) == (20, 20)
    cross = g[20, 20] + g[19, 20] + g[21, 20] + g[20, 19] + g[20, 21]
    assert cross > 0.5 * g.sum()


def test_density_weights_renormalise():
    c = np.tile(10.0 + np.sin(np.arange(40) / 5.0), (1, 1))
    a = build_density(c, [1.0], 30, 40)
    b = build_density(np.vstack([c, c]), [1.0, 3.0], 30, 40)
    assert np.allclose(a.grid, b.grid, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_density_point_weights_sum_to_one(seed, n_curves):
    rng = np.random.default_rng(seed)
    curves = rng.uniform(0, 29, (n_curves, 17))
    scores = rng.random(n_curves) + 1e-3
    d = build_density(curves, scores, 30, 17)
    assert d.curve_weights.sum() * curves.shape[1] == pytest.approx(1.0, abs=1e-12)
    assert d.grid.max() == pytest.approx(1.0)
    assert d.grid.min() >= 0


# -- pixel scores ----------------------------------------------------------------

@pytest.mark.parametrize("phi,g,expected", [(1.0, 1.0, 1.0), (0.0, 0.6, 0.2), (1.0, 0.0, 1 / 3)])
def test_pixel_score_examples(phi, g, expected):
    s = score_pixels(np.full((2, 2), phi), np.full((2, 2), g))
    assert np.allclose(s, expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pixel_scores_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    s = score_pixels(rng.random((6, 7)), GradientField(rng.random((6, 7))))
    assert np.all((s >= 0) & (s <= 1))


def test_pixel_score_shape_mismatch():
    with pytest.raises(ValueError):
        score_pixels(np.zeros((2, 3)), np.zeros((3, 2)))


# -- accept / discard ----------------------------------------------------------

def test_single_bin_global_max():
    rng = np.random.default_rng(0)
    s = rng.random((12, 20))
    obs, noise = accept_discard(s, 0.0, 20, ObservationSet.empty(), np.zeros_like(s))
    r, c = np.unravel_index(s.argmax(), s.shape)
    assert len(obs) == 1
    assert (obs.x[0], obs.y[0]) == (c, r)
    assert noise.per_point_variance.tolist() == [1.0]


def test_all_below_threshold_empty():
    s = np.full((5, 10), 0.2)
    obs, _ = accept_discard(s, 0.5, 2, ObservationSet.empty(), np.zeros_like(s))
    assert len(obs) == 0


def test_stale_previous_dropped():
    s = np.full((10, 15), 0.1)
    prev = ObservationSet(np.array([7.0]), np.array([3.0]))
    obs, _ = accept_discard(s, 0.5, 5, prev, np.zeros_like(s))
    assert len(obs) == 0


def test_previous_kept_when_still_good():
    s = np.zeros((10, 15))
    s[3, 7] = 0.9
    prev = ObservationSet(np.array([7.0]), np.array([3.0]))
    noise = NoiseModel(np.array([0.25]))
    obs, out_noise = accept_discard(s, 0.5, 5, prev, np.zeros_like(s), noise, new_noise=1.0)
    assert obs.x.tolist() == [7.0] and obs.y.tolist() == [3.0]
    assert out_noise.per_point_variance.tolist() == [0.25]


def test_end_bins_retained():
    s = np.zeros((10, 15))
    prev = ObservationSet(np.array([0.0, 14.0]), np.array([4.0, 5.0]))
    obs, _ = accept_discard(s, 0.5, 5, prev, np.zeros_like(s))
    assert obs.x.tolist() == [0.0, 14.0]
    obs, _ = accept_discard(s, 0.5, 5, prev, np.zeros_like(s), retain_end_bins=False)
    assert len(obs) == 0


def test_ties_lower_column_then_higher_gradient():
    s = np.zeros((6, 5))
    s[2, 1] = s[4, 1] = s[1, 3] = 0.8
    g = np.zeros((6, 5))
    g[4, 1] = 0.5
    obs, _ = accept_discard(s, 0.5, 5, ObservationSet.empty(), g)
    assert (obs.x[0], obs.y[0]) == (1.0, 4.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9), st.floats(0, 1))
def test_accept_discard_injective_and_binned(seed, dx, threshold):
    rng = np.random.default_rng(seed)
    s = rng.random((15, 23))
    px = np.sort(rng.choice(23, size=5, replace=False)).astype(float)
    prev = ObservationSet(px, rng.integers(0, 15, 5).astype(float))
    obs, noise = accept_discard(s, threshold, dx, prev, rng.random((15, 23)))
    bins = (obs.x // dx).astype(int)
    assert np.unique(bins).size == bins.size <= n_bins(23, dx)
    assert np.all(np.diff(obs.x) > 0)
    assert len(noise) == len(obs)


# -- whole traces ----------------------------------------------------------------

def _straight_edge(m=60, n=80, row=30):
    img = np.zeros((m, n))
    img[row:] = 1.0
    return gradient_magnitude(img)


SMALL = dict(kernel=KernelSpec(signal_variance=10.0**2, lengthscale=20.0), curves=200)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TraceConfig(curves=10, keep_ratio=0.05)
    with pytest.raises(ConfigurationError):
        TraceConfig(threshold=1.5)
    with pytest.raises(ConfigurationError):
        TraceConfig(bin_width=0)
    assert TraceConfig(curves=10, keep_ratio=0.1).n_keep == 1


def test_straight_edge_within_one_pixel():
    g = _straight_edge()  # intensity step between rows 29 and 30
    res = trace(TraceConfig(**SMALL), g, [(0, 29), (79, 30)])
    assert res.converged
    assert len(res.observations) == n_bins(80, 5)
    assert np.abs(res.mean - 29.5).max() <= 1.0
    assert np.all(res.lower <= res.mean) and np.all(res.mean <= res.upper)


def test_complete_init_exits_immediately():
    g = _straight_edge()
    xs = np.arange(0, 80, 5, dtype=float) + 2
    res = trace(TraceConfig(**SMALL), g, ObservationSet(xs, np.full(xs.size, 30.0)))
    assert res.iterations == 0 and res.converged
    assert np.abs(res.mean - 30.0).max() <= 1.0


def test_trace_deterministic():
    g = _straight_edge()
    cfg = TraceConfig(**SMALL, seed=5)
    a = trace(cfg, g, [(0, 29), (79, 29)])
    b = trace(cfg, g, [(0, 29), (79, 29)])
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.upper, b.upper)
    assert a.iterations == b.iterations


def test_accumulation_monotone():
    case = make_sinusoid_case(M=160, N=200, amplitude=30, periods=2, noise_level=0.2,
                              occlusion_spans=[(120, 135)], seed=1)
    cfg = TraceConfig(kernel=KernelSpec(signal_variance=40.0**2, lengthscale=20.0), curves=200)
    res = trace(cfg, case.gradient, list(case.endpoints()))
    counts = [2] + [h.observations for h in res.history]
    for h, before in zip(res.history, counts[:-1]):
        if h.stalled:
            assert h.observations == before
        else:
            assert h.observations > before
    assert trace_jaccard(res.mean, case.truth, *case.shape) > 0.95


def test_lost_edge_on_blank_gradient():
    g = GradientField(np.zeros((20, 30)))
    with pytest.raises(LostEdgeError):
        trace(TraceConfig(**SMALL), g, [(0, 10), (29, 10)])


def test_init_points_collapse_per_bin():
    g = _straight_edge()
    tr = EdgeTracer(TraceConfig(**SMALL), g, [(0, 10), (1, 29), (79, 29)])
    assert tr.observations.x.tolist() == [1.0, 79.0]


def test_band_covers_prior_edges():
    """Edges drawn from the model's own prior; the 95% band should contain them."""
    m, n = 160, 150
    spec = KernelSpec(signal_variance=15.0**2, lengthscale=25.0)
    prior = posterior(ObservationSet.empty(), NoiseModel.uniform(1.0, 0), spec, np.arange(n, dtype=float))
    coverage = []
    for seed in range(20):
        edge = sample_posterior(prior, 1, seed=1000 + seed)[0] + m / 2
        rng = np.random.default_rng(seed)
        img = 0.25 + 0.5 * np.clip(np.arange(m)[:, None] + 0.5 - edge[None, :], 0, 1)
        img = img + rng.normal(0, 0.1, img.shape)
        cfg = TraceConfig(kernel=spec, curves=200, seed=seed)
        res = trace(cfg, gradient_magnitude(img), [(0, round(edge[0])), (n - 1, round(edge[-1]))])
        coverage.append(np.mean((edge >= res.lower) & (edge <= res.upper)))
    assert np.median(coverage) >= 0.85


# -- sequences -------------------------------------------------------------------

SEQ_CASE = dict(M=160, N=200, amplitude=30, periods=2, noise_level=0.1, occlusion_spans=())
SEQ_CFG = TraceConfig(kernel=KernelSpec(signal_variance=40.0**2, lengthscale=20.0), curves=200)


def test_propagate_stride():
    g = _straight_edge()
    res = trace(TraceConfig(**SMALL), g, [(0, 29), (79, 29)])
    sub = propagate(res, 4)
    assert sub.x[0] == res.observations.x[0] and sub.x[-1] == res.observations.x[-1]
    assert len(sub) == math.ceil(len(res.observations) / 4) + (1 if (len(res.observations) - 1) % 4 else 0)
    assert len(propagate(res, math.inf)) == 2
    with pytest.raises(ConfigurationError):
        propagate(res, 0)


def test_identical_frames_converge_faster():
    case = make_sinusoid_case(**SEQ_CASE)
    frames = trace_sequence(SEQ_CFG, [case.gradient, case.gradient], list(case.endpoints()), stride=1)
    a, b = frames[0].result, frames[1].result
    assert b.iterations < a.iterations
    assert np.abs(a.mean - b.mean).max() <= 1.0


def test_infinite_stride_is_independent():
    case = make_sinusoid_case(**SEQ_CASE)
    frames = trace_sequence(SEQ_CFG, [case.gradient, case.gradient], list(case.endpoints()), stride=math.inf)
    assert frames[0].init_size == frames[1].init_size == 2
    assert np.array_equal(frames[0].result.mean, frames[1].result.mean)


def test_shifted_frames():
    c0 = make_sinusoid_case(**SEQ_CASE)
    c1 = make_sinusoid_case(**SEQ_CASE, shift=2.0)
    frames = trace_sequence(SEQ_CFG, [c0.gradient, c1.gradient], list(c0.endpoints()), stride=4)
    for f, c in zip(frames, (c0, c1)):
        assert f.ok
        assert trace_jaccard(f.result.mean, c.truth, *c.shape) >= 0.95


def test_failed_frame_flagged_and_reseeded():
    case = make_sinusoid_case(**SEQ_CASE)
    blank = GradientField(np.zeros(case.shape))
    frames = trace_sequence(SEQ_CFG, [case.gradient, blank, case.gradient], list(case.endpoints()), stride=4)
    assert frames[0].ok and not frames[1].ok and frames[2].ok
    assert frames[1].error
    assert frames[2].init_size == frames[1].init_size
