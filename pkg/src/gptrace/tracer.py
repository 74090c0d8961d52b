"""Recursive edge tracing with Gaussian process posterior curves.

Each iteration samples curves from the current posterior, scores them by the
mean gradient response along their arc length, turns the best ones into a
weighted frequency density, scores every pixel by combining density and
gradient, and updates the observation set through thresholding and per-bin
non-max suppression. Once every column bin holds an observation the
hyperparameters are optimised and the posterior mean is returned together
with a pointwise 95% band.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .exceptions import ConditioningError, ConfigurationError, LostEdgeError
from .gp_core import (
    KernelSpec,
    NoiseModel,
    ObservationSet,
    PosteriorPredictive,
    optimize_hyperparameters,
    posterior,
    sample_posterior,
)
from .image import GradientField

logger = logging.getLogger(__name__)

BAND_Z = 1.96


@dataclass
class TraceConfig:
    """User-facing parameters of a trace.

    ``keep_ratio * curves`` (truncated) curves feed the density each
    iteration. ``endpoint_noise`` overrides the noise variance of the initial
    points; such overrides stay fixed during the final optimisation.
    """

    kernel: KernelSpec = field(default_factory=KernelSpec)
    noise_variance: float = 1.0
    curves: int = 500
    keep_ratio: float = 0.1
    threshold: float = 1.0
    bin_width: int = 5
    density_lengthscale: float = 1.0
    max_iterations: int = 500
    seed: int = 0
    threshold_decay: float = 0.9
    threshold_floor: float = 0.01
    endpoint_noise: float | None = None
    optimize: bool = True
    restarts: int = 5

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = KernelSpec(**self.kernel)
        if self.curves < 1:
            raise ConfigurationError("need at least one posterior curve")
        if not 0 < self.keep_ratio <= 1:
            raise ConfigurationError("keep_ratio must lie in (0, 1]")
        if int(self.keep_ratio * self.curves) < 1:
            raise ConfigurationError("keep_ratio * curves must keep at least one curve")
        if not 0 <= self.threshold <= 1:
            raise ConfigurationError("threshold must lie in [0, 1]")
        if int(self.bin_width) != self.bin_width or self.bin_width < 1:
            raise ConfigurationError("bin_width must be an integer >= 1")
        self.bin_width = int(self.bin_width)
        if not self.density_lengthscale > 0:
            raise ConfigurationError("density_lengthscale must be positive")
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise ConfigurationError("noise_variance must be >= 0")
        if self.endpoint_noise is not None and not self.endpoint_noise >= 0:
            raise ConfigurationError("endpoint_noise must be >= 0")
        if not 0 < self.threshold_decay < 1:
            raise ConfigurationError("threshold_decay must lie in (0, 1)")
        if not 0 <= self.threshold_floor <= 1:
            raise ConfigurationError("threshold_floor must lie in [0, 1]")
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")

    @property
    def n_keep(self) -> int:
        return int(self.keep_ratio * self.curves)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = asdict(self.kernel)
        return d


# -- curve scoring ---------------------------------------------------------------

def simpson_weights(n: int) -> np.ndarray:
    """Composite Simpson quadrature weights for ``n`` unit-spaced samples.

    Even ``n`` uses Simpson on the first ``n-1`` samples plus the 3-point
    quadratic rule for the final interval (exact for quadratics either way).
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if n == 1:
        return np.zeros(1)
    if n == 2:
        return np.array([0.5, 0.5])
    w = np.zeros(n)
    odd_n = n if n % 2 == 1 else n - 1
    w[:odd_n:2] = 2.0 / 3.0
    w[1:odd_n:2] = 4.0 / 3.0
    w[0] = w[odd_n - 1] = 1.0 / 3.0
    if n % 2 == 0:
        w[n - 3] += -1.0 / 12.0
        w[n - 2] += 8.0 / 12.0
        w[n - 1] += 5.0 / 12.0
    return w


def score_curves(curves, gradient: GradientField, weights=None) -> np.ndarray:
    """Mean gradient response per unit arc length for each row of ``curves``.

    Curves are rows over columns ``0..N-1``; gradient samples off the image
    count as zero.
    """
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    if weights is None:
        weights = simpson_weights(curves.shape[1])
    return kernels.score_curves(gradient.values, curves, weights)


def score_curve(curve, gradient: GradientField) -> float:
    curve = np.asarray(curve, dtype=float)
    if curve.ndim != 1 or curve.size < 3:
        raise ConfigurationError("a curve needs at least 3 samples")
    return float(score_curves(curve[None, :], gradient)[0])


def select_optimal(curves, scores, keep_ratio: float):
    """The ``floor(keep_ratio * L)`` best curves, by descending score then index.

    Returns ``(curves, scores, indices)``.
    """
    curves = np.atleast_2d(curves)
    scores = np.asarray(scores, dtype=float)
    if not np.any(scores > 0):
        raise LostEdgeError(
            "every posterior curve scored zero; increase the signal variance or "
            "move the endpoints closer to the edge",
            {"curves": int(scores.size)},
        )
    n_keep = max(int(keep_ratio * scores.size), 1)
    order = np.lexsort((np.arange(scores.size), -scores))[:n_keep]
    return curves[order], scores[order], order


# -- density and pixel scores ---------------------------------------------------

@dataclass
class FrequencyDensity:
    grid: np.ndarray  # rescaled to max 1 unless identically zero
    raw_mass: float  # grid sum before rescaling
    curve_weights: np.ndarray  # per-curve point weight; sums to 1 over all points


def build_density(curves, scores, height: int, width: int, lengthscale: float = 1.0) -> FrequencyDensity:
    """Score-weighted Gaussian kernel density of where the curves pass.

    Every point of curve ``l`` carries weight ``I_l / (n_points * sum(I))``;
    kernels are truncated at four lengthscales.
    """
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    scores = np.asarray(scores, dtype=float)
    if curves.shape[0] == 0:
        raise ConfigurationError("density needs at least one curve")
    n_pts = curves.shape[1]
    total = scores.sum()
    if total > 0:
        per_point = scores / (total * n_pts)
    else:
        per_point = np.full(scores.size, 1.0 / (scores.size * n_pts))
    grid = np.zeros((height, width))
    xs = np.broadcast_to(np.arange(n_pts, dtype=float), curves.shape)
    ws = np.broadcast_to(per_point[:, None], curves.shape)
    kernels.deposit(grid, xs, curves, ws, float(lengthscale), 4.0 * float(lengthscale))
    raw = float(grid.sum())
    top = grid.max()
    if top > 0:
        grid /= top
    return FrequencyDensity(grid, raw, per_point)


def score_pixels(density, gradient) -> np.ndarray:
    """``(phi*G + phi + G) / 3`` elementwise."""
    phi = density.grid if isinstance(density, FrequencyDensity) else np.asarray(density, float)
    g = gradient.values if isinstance(gradient, GradientField) else np.asarray(gradient, float)
    if phi.shape != g.shape:
        raise ValueError(f"density {phi.shape} and gradient {g.shape} differ in shape")
    return (phi * g + phi + g) / 3.0


# -- accept / discard -----------------------------------------------------------

def n_bins(width: int, bin_width: int) -> int:
    return -(-width // bin_width)


def accept_discard(
    scores: np.ndarray,
    threshold: float,
    bin_width: int,
    previous: ObservationSet,
    gradient,
    previous_noise: NoiseModel | None = None,
    new_noise: float = 1.0,
    retain_end_bins: bool = True,
) -> tuple[ObservationSet, NoiseModel]:
    """Threshold pixel scores, pool with the re-scored previous set, keep the best per bin.

    Bins are ``[i*bin_width, (i+1)*bin_width)``; the last one holds whatever
    columns remain. Previous observations below ``threshold`` are dropped.
    Ties go to the lower column, then the higher gradient, then the
    previous observation. With ``retain_end_bins`` the first and last bins
    never lose their observation for lack of a replacement.

    New points carry noise ``new_noise``; kept points keep their own.
    """
    g = gradient.values if isinstance(gradient, GradientField) else np.asarray(gradient, float)
    m, n = scores.shape
    nb = n_bins(n, bin_width)
    if previous_noise is None:
        previous_noise = NoiseModel.uniform(new_noise, len(previous))

    masked = np.where(scores >= threshold, scores, -1.0)
    col_best = masked.max(axis=0)
    tied = masked == col_best[None, :]
    col_row = np.argmax(np.where(tied, g, -1.0), axis=0)
    padded = np.full(nb * bin_width, -1.0)
    padded[:n] = col_best
    local = padded.reshape(nb, bin_width).argmax(axis=1)
    new_col = np.arange(nb) * bin_width + local
    new_score = padded[new_col]
    ok = new_score >= 0
    new_col = new_col[ok]
    new_row = col_row[new_col]

    px, py = previous.x, previous.y
    p_score = kernels.bilinear(scores, px, py) if px.size else np.empty(0)
    p_grad = kernels.bilinear(g, px, py) if px.size else np.empty(0)
    keep = p_score >= threshold

    cand_x = np.concatenate([new_col.astype(float), px[keep]])
    cand_y = np.concatenate([new_row.astype(float), py[keep]])
    cand_s = np.concatenate([new_score[ok], p_score[keep]])
    cand_g = np.concatenate([g[new_row, new_col], p_grad[keep]])
    cand_prev = np.concatenate([np.full(new_col.size, -1), np.flatnonzero(keep)])
    cand_bin = (cand_x // bin_width).astype(int)

    # primary key last: bin, score desc, column asc, gradient desc, previous first
    order = np.lexsort((cand_prev < 0, -cand_g, cand_x, -cand_s, cand_bin))
    first = np.ones(order.size, bool)
    first[1:] = cand_bin[order][1:] != cand_bin[order][:-1]
    chosen = order[first]

    if retain_end_bins and px.size:
        prev_bin = (px // bin_width).astype(int)
        have = set(cand_bin[chosen].tolist())
        extra = []
        for b in {0, nb - 1}:
            if b in have:
                continue
            idx = np.flatnonzero(prev_bin == b)
            if idx.size:
                best = idx[np.lexsort((px[idx], -p_score[idx]))[0]]
                extra.append(best)
        if extra:
            extra = np.asarray(extra)
            cand_x = np.concatenate([cand_x, px[extra]])
            cand_y = np.concatenate([cand_y, py[extra]])
            cand_prev = np.concatenate([cand_prev, extra])
            chosen = np.concatenate([chosen, np.arange(cand_x.size - extra.size, cand_x.size)])

    chosen = chosen[np.argsort(cand_x[chosen], kind="stable")]
    src = cand_prev[chosen]
    old = src >= 0
    noise = np.full(src.size, float(new_noise))
    noise[old] = previous_noise.per_point_variance[src[old]]
    fixed = np.zeros(src.size, bool)
    fixed[old] = previous_noise.fixed[src[old]]
    return ObservationSet(cand_x[chosen], cand_y[chosen]), NoiseModel(noise, fixed)


# -- the tracing loop -------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    observations: int
    threshold: float
    best_score: float
    threshold_reductions: int
    stalled: bool


@dataclass
class TraceResult:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    observations: ObservationSet
    noise: NoiseModel
    theta_hat: KernelSpec
    noise_variance_hat: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    lml: float | None = None
    optimizer_converged: bool = True
    runtime_s: float = 0.0

    @property
    def columns(self) -> np.ndarray:
        return np.arange(self.mean.size)

    def report(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "observations": len(self.observations),
            "theta_hat": {
                "family": self.theta_hat.family,
                "nu": self.theta_hat.nu,
                "signal_variance": float(self.theta_hat.signal_variance),
                "lengthscale": float(self.theta_hat.lengthscale),
                "noise_variance": float(self.noise_variance_hat),
            },
            "log_marginal_likelihood": self.lml,
            "optimizer_converged": self.optimizer_converged,
            "runtime_s": self.runtime_s,
            "history": [asdict(h) for h in self.history],
        }


def _as_observations(init, width) -> ObservationSet:
    if isinstance(init, ObservationSet):
        return init
    pts = np.asarray(init, dtype=float).reshape(-1, 2)
    order = np.argsort(pts[:, 0], kind="stable")
    return ObservationSet(pts[order, 0], pts[order, 1])


class EdgeTracer:
    """Stateful driver for one trace; ``run`` loops ``step`` then ``finalize``.

    ``observations`` and ``noise`` may be edited between steps.
    """

    def __init__(self, config: TraceConfig, gradient: GradientField, init, init_noise: NoiseModel | None = None):
        self.config = config
        self.gradient = gradient
        self.height, self.width = gradient.shape
        if self.width < 3:
            raise ConfigurationError("image must be at least 3 columns wide")
        obs = _as_observations(init, self.width)
        if len(obs) < 1:
            raise ConfigurationError("tracing needs initial observations (e.g. two endpoints)")
        obs.check_bounds(self.height, self.width)
        if init_noise is None:
            if config.endpoint_noise is not None:
                init_noise = NoiseModel(np.full(len(obs), config.endpoint_noise), np.ones(len(obs), bool))
            else:
                init_noise = NoiseModel.uniform(config.noise_variance, len(obs))
        if len(init_noise) != len(obs):
            raise ConfigurationError("initial noise must match the initial observations")
        self.observations, self.noise = self._one_per_bin(obs, init_noise)
        # constant prior mean at the initial points' average height
        self.prior_mean = float(np.mean(self.observations.y))
        self.xstar = np.arange(self.width, dtype=float)
        self.bins = n_bins(self.width, config.bin_width)
        self.threshold = float(config.threshold)
        self.iteration = 0
        self.history: list[IterationRecord] = []
        self._weights = simpson_weights(self.width)
        self.last_density: FrequencyDensity | None = None
        self.ppd = self._fit()

    def _one_per_bin(self, obs, noise):
        """Collapse initial points sharing a bin to the one on the strongest gradient."""
        bins = (obs.x // self.config.bin_width).astype(int)
        if np.unique(bins).size == bins.size:
            return obs, noise
        g = kernels.bilinear(self.gradient.values, obs.x, obs.y)
        order = np.lexsort((obs.x, -g, bins))
        first = np.ones(order.size, bool)
        first[1:] = bins[order][1:] != bins[order][:-1]
        keep = np.sort(order[first])
        return (
            ObservationSet(obs.x[keep], obs.y[keep]),
            NoiseModel(noise.per_point_variance[keep], noise.fixed[keep]),
        )

    def _centered(self) -> ObservationSet:
        return ObservationSet(self.observations.x, self.observations.y - self.prior_mean)

    def _fit(self, spec: KernelSpec | None = None, noise: NoiseModel | None = None) -> PosteriorPredictive:
        ppd = posterior(
            self._centered(), self.noise if noise is None else noise,
            self.config.kernel if spec is None else spec, self.xstar,
        )
        ppd.mean = ppd.mean + self.prior_mean
        return ppd

    @property
    def complete(self) -> bool:
        return len(self.observations) == self.bins

    def step(self) -> IterationRecord:
        cfg = self.config
        self.iteration += 1
        curves = sample_posterior(
            self.ppd, cfg.curves, seed=[cfg.seed, self.iteration], scale=cfg.kernel.signal_variance
        )
        scores = score_curves(curves, self.gradient, self._weights)
        best, best_scores, _ = select_optimal(curves, scores, cfg.keep_ratio)
        density = build_density(best, best_scores, self.height, self.width, cfg.density_lengthscale)
        self.last_density = density
        pixel_scores = score_pixels(density, self.gradient)

        before = len(self.observations)
        reductions = 0
        while True:
            obs, noise = accept_discard(
                pixel_scores, self.threshold, cfg.bin_width, self.observations,
                self.gradient, self.noise, cfg.noise_variance,
            )
            if len(obs) > before or self.threshold <= cfg.threshold_floor:
                break
            self.threshold = max(self.threshold * cfg.threshold_decay, cfg.threshold_floor)
            reductions += 1

        stalled = len(obs) <= before
        if not stalled:
            self.observations, self.noise = obs, noise
            self.ppd = self._fit()
        record = IterationRecord(
            self.iteration, len(self.observations), self.threshold,
            float(best_scores[0]), reductions, stalled,
        )
        self.history.append(record)
        logger.debug("iteration %s: %s", self.iteration, record)
        return record

    def finalize(self) -> TraceResult:
        cfg = self.config
        spec, noise, lml, opt_ok = cfg.kernel, self.noise, None, True
        if cfg.optimize and len(self.observations) >= 2:
            res = optimize_hyperparameters(
                self._centered(), self.noise, cfg.kernel, restarts=cfg.restarts, seed=cfg.seed
            )
            spec, noise, lml, opt_ok = res.spec, res.noise, res.lml, res.converged
        ppd = self._fit(spec, noise)
        lower, upper = ppd.band(BAND_Z)
        return TraceResult(
            mean=ppd.mean, lower=lower, upper=upper,
            observations=self.observations, noise=noise,
            theta_hat=spec, noise_variance_hat=noise.shared_variance(),
            iterations=self.iteration, converged=self.complete,
            history=list(self.history), lml=lml, optimizer_converged=opt_ok,
        )

    def run(self, callback: Callable[["EdgeTracer", IterationRecord], None] | None = None) -> TraceResult:
        t0 = time.perf_counter()
        while not self.complete and self.iteration < self.config.max_iterations:
            record = self.step()
            if callback is not None:
                callback(self, record)
        if not self.complete:
            logger.warning(
                "stopped after %d iterations with %d/%d bins filled",
                self.iteration, len(self.observations), self.bins,
            )
        result = self.finalize()
        result.runtime_s = time.perf_counter() - t0
        return result


def trace(config: TraceConfig, gradient: GradientField, init, init_noise: NoiseModel | None = None, callback=None) -> TraceResult:
    """Trace one edge starting from ``init`` (endpoints or a propagated pixel set).

    ``init`` is an ``ObservationSet`` or a sequence of ``(column, row)`` pairs.
    """
    return EdgeTracer(config, gradient, init, init_noise).run(callback)


@dataclass
class FrameResult:
    index: int
    result: TraceResult | None
    init_size: int
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def propagate(result: TraceResult, stride: int | float | None) -> ObservationSet:
    """Every ``stride``-th observation of a finished trace, always keeping the last."""
    obs = result.observations
    if stride is None or not math.isfinite(stride):
        idx = np.array([0, len(obs) - 1])
    else:
        stride = int(stride)
        if stride < 1:
            raise ConfigurationError("stride must be >= 1")
        idx = np.arange(0, len(obs), stride)
        if idx[-1] != len(obs) - 1:
            idx = np.append(idx, len(obs) - 1)
    idx = np.unique(idx)
    return ObservationSet(obs.x[idx], obs.y[idx])


def trace_sequence(
    config: TraceConfig,
    frames: Sequence[GradientField],
    init,
    stride: int | float | None = 4,
) -> list[FrameResult]:
    """Trace the same edge through consecutive frames.

    Frame 0 starts from ``init``; later frames start from every ``stride``-th
    observation of the last successful frame (noise ``config.noise_variance``).
    ``stride=None`` or ``inf`` reuses ``init`` for every frame.
    """
    if not frames:
        return []
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ConfigurationError("all frames must share the same dimensions")
    out: list[FrameResult] = []
    last_ok: TraceResult | None = None
    for t, frame in enumerate(frames):
        if last_ok is None or stride is None or not math.isfinite(stride):
            start, start_noise = _as_observations(init, shape[1]), None
        else:
            start = propagate(last_ok, stride)
            start_noise = NoiseModel.uniform(config.noise_variance, len(start))
        try:
            res = trace(config, frame, start, start_noise)
        except (LostEdgeError, ConditioningError) as exc:
            logger.warning("frame %d failed: %s", t, exc)
            out.append(FrameResult(t, None, len(start), str(exc)))
            continue
        out.append(FrameResult(t, res, len(start)))
        last_ok = res
    return out
