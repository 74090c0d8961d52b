"""Gaussian process regression over one-dimensional inputs.

Covers kernel evaluation, Gram matrices, the posterior predictive
distribution, posterior sampling, the log marginal likelihood with its
analytic gradient, and multi-start hyperparameter optimisation.

All routines are pure functions of their arguments (plus an explicit seed
where randomness is involved).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .exceptions import ConditioningError, ConfigurationError

logger = logging.getLogger(__name__)

SQUARED_EXPONENTIAL = "squared_exponential"
MATERN = "matern"
_FAMILY_ALIASES = {
    "se": SQUARED_EXPONENTIAL,
    "rbf": SQUARED_EXPONENTIAL,
    "squared_exponential": SQUARED_EXPONENTIAL,
    "squaredexponential": SQUARED_EXPONENTIAL,
    "matern": MATERN,
}

# jitter ladder, as multiples of the signal variance
JITTER_START = 1e-8
JITTER_MAX = 1e-2

NOISE_FLOOR = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    """Stationary isotropic covariance function ``k(r; signal_variance, lengthscale)``.

    ``family`` is ``"squared_exponential"`` or ``"matern"``; Matern kernels
    take ``nu`` in {1.5, 2.5}.
    """

    family: str = MATERN
    signal_variance: float = 75.0**2
    lengthscale: float = 20.0
    nu: float = 2.5

    def __post_init__(self):
        fam = _FAMILY_ALIASES.get(str(self.family).lower().replace("-", "_").replace(" ", ""))
        if fam is None:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam == MATERN and self.nu not in (1.5, 2.5):
            raise ConfigurationError(f"Matern smoothness must be 1.5 or 2.5, got {self.nu}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ConfigurationError(f"signal_variance must be > 0, got {self.signal_variance}")
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ConfigurationError(f"lengthscale must be > 0, got {self.lengthscale}")

    def with_params(self, signal_variance=None, lengthscale=None) -> "KernelSpec":
        return replace(
            self,
            signal_variance=self.signal_variance if signal_variance is None else signal_variance,
            lengthscale=self.lengthscale if lengthscale is None else lengthscale,
        )

    def correlation(self, r):
        """Kernel value divided by the signal variance."""
        r = np.abs(np.asarray(r, dtype=float))
        if self.family == SQUARED_EXPONENTIAL:
            return np.exp(-0.5 * (r / self.lengthscale) ** 2)
        if self.nu == 1.5:
            a = math.sqrt(3.0) * r / self.lengthscale
            return (1.0 + a) * np.exp(-a)
        a = math.sqrt(5.0) * r / self.lengthscale
        return (1.0 + a + a * a / 3.0) * np.exp(-a)

    def __call__(self, r):
        return self.signal_variance * self.correlation(r)

    def d_lengthscale(self, r):
        """Partial derivative of ``k(r)`` with respect to the lengthscale."""
        r = np.abs(np.asarray(r, dtype=float))
        ell = self.lengthscale
        if self.family == SQUARED_EXPONENTIAL:
            return self(r) * r * r / ell**3
        if self.nu == 1.5:
            a = math.sqrt(3.0) * r / ell
            return self.signal_variance * a * a * np.exp(-a) / ell
        a = math.sqrt(5.0) * r / ell
        return self.signal_variance * a * a * (1.0 + a) * np.exp(-a) / (3.0 * ell)


def kernel_eval(spec: KernelSpec, r) -> np.ndarray | float:
    """Evaluate the kernel at distance(s) ``r >= 0``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ConfigurationError("kernel distance must be non-negative")
    out = spec(r_arr)
    return float(out) if out.ndim == 0 else out


def gram(spec: KernelSpec, a, b) -> np.ndarray:
    """Matrix of pairwise kernel values ``k(|a_i - b_j|)``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return spec(np.abs(a[:, None] - b[None, :]))


@dataclass(frozen=True)
class ObservationSet:
    """Fitted points ``(x, y)``: columns strictly increasing, rows as targets."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.shape != y.shape or x.ndim != 1:
            raise ConfigurationError(f"inputs and targets differ in shape: {x.shape} vs {y.shape}")
        if x.size > 1 and np.any(np.diff(x) <= 0):
            raise ConfigurationError("observation columns must be strictly increasing")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ConfigurationError("observations must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls(np.empty(0), np.empty(0))

    def __len__(self) -> int:
        return self.x.size

    def check_bounds(self, height: int, width: int) -> None:
        if len(self) == 0:
            return
        if self.x.min() < 0 or self.x.max() > width - 1 or self.y.min() < 0 or self.y.max() > height - 1:
            raise ConfigurationError(
                f"observations fall outside the {height}x{width} image"
            )


@dataclass(frozen=True)
class NoiseModel:
    """Per-observation noise variances.

    ``fixed`` marks entries excluded from the shared noise parameter: they keep
    their value during optimisation (e.g. trusted endpoints).
    """

    per_point_variance: np.ndarray
    fixed: np.ndarray | None = None

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.per_point_variance, dtype=float))
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ConfigurationError("noise variances must be finite and non-negative")
        object.__setattr__(self, "per_point_variance", v)
        fixed = np.zeros(v.shape, bool) if self.fixed is None else np.asarray(self.fixed, bool)
        if fixed.shape != v.shape:
            raise ConfigurationError("fixed mask must match the noise vector")
        object.__setattr__(self, "fixed", fixed)

    @classmethod
    def uniform(cls, variance: float, m: int) -> "NoiseModel":
        return cls(np.full(m, float(variance)))

    def __len__(self) -> int:
        return self.per_point_variance.size

    @property
    def free(self) -> np.ndarray:
        return ~self.fixed

    def shared_variance(self) -> float:
        """Representative value of the free (shared) noise entries."""
        free = self.per_point_variance[self.free]
        return float(free.mean()) if free.size else 0.0

    def with_shared(self, variance: float) -> "NoiseModel":
        v = self.per_point_variance.copy()
        v[self.free] = variance
        return NoiseModel(v, self.fixed.copy())


@dataclass
class PosteriorPredictive:
    """Gaussian over function values at ``xstar``."""

    mean: np.ndarray
    cov: np.ndarray
    xstar: np.ndarray
    jitter: float = 0.0  # added to the observation covariance diagonal

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.diag(self.cov), 0.0, None)

    def band(self, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
        half = z * np.sqrt(self.variance)
        return self.mean - half, self.mean + half


def jittered_cholesky(mat: np.ndarray, scale: float, name: str) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``mat + jitter*I`` with escalating jitter.

    Jitter starts at ``1e-8 * scale`` and grows tenfold up to ``1e-2 * scale``.
    Returns the factor and the jitter actually added.
    """
    n = mat.shape[0]
    if n == 0:
        return np.empty((0, 0)), 0.0
    level = JITTER_START
    while level <= JITTER_MAX * (1 + 1e-12):
        jitter = level * scale
        try:
            chol = linalg.cholesky(mat + jitter * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(chol)):
                return chol, jitter
        except linalg.LinAlgError:
            pass
        level *= 10.0
    raise ConditioningError(name, JITTER_MAX * scale)


def _check_pair(obs: ObservationSet, noise: NoiseModel) -> None:
    if len(noise) != len(obs):
        raise ConfigurationError(
            f"noise model has {len(noise)} entries for {len(obs)} observations"
        )


def posterior(obs: ObservationSet, noise: NoiseModel, spec: KernelSpec, xstar) -> PosteriorPredictive:
    """Posterior predictive mean and covariance at ``xstar``.

    With no observations this is the zero-mean prior over ``xstar``.
    """
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    k_ss = gram(spec, xstar, xstar)
    if len(obs) == 0:
        return PosteriorPredictive(np.zeros(xstar.size), k_ss, xstar)
    _check_pair(obs, noise)
    a = gram(spec, obs.x, obs.x) + np.diag(noise.per_point_variance)
    chol, jitter = jittered_cholesky(a, spec.signal_variance, "observation covariance K + noise")
    k_s = gram(spec, obs.x, xstar)
    alpha = linalg.cho_solve((chol, True), obs.y, check_finite=False)
    v = linalg.solve_triangular(chol, k_s, lower=True, check_finite=False)
    mean = k_s.T @ alpha
    cov = k_ss - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return PosteriorPredictive(mean, cov, xstar, jitter)


def sample_posterior(ppd: PosteriorPredictive, n_curves: int, seed, scale: float | None = None) -> np.ndarray:
    """Draw ``n_curves`` i.i.d. curves from ``N(mean, cov)``; shape ``(n_curves, len(xstar))``.

    ``scale`` sets the jitter unit (defaults to the largest prior-like
    variance on the diagonal). A zero covariance returns copies of the mean.
    """
    if n_curves < 1:
        raise ConfigurationError("need at least one curve")
    rng = np.random.default_rng(seed)
    n = ppd.mean.size
    z = rng.standard_normal((n, n_curves))
    if not np.any(ppd.cov):
        return np.repeat(ppd.mean[None, :], n_curves, axis=0)
    if scale is None:
        scale = float(np.max(np.abs(np.diag(ppd.cov))))
    chol, _ = jittered_cholesky(ppd.cov, scale, "posterior predictive covariance")
    return (ppd.mean[:, None] + chol @ z).T


@dataclass
class LMLResult:
    value: float
    # d/d(signal_variance), d/d(lengthscale), d/d(shared noise variance)
    gradient: np.ndarray


def log_marginal_likelihood(obs: ObservationSet, noise: NoiseModel, spec: KernelSpec) -> LMLResult:
    """Log evidence of ``obs`` and its gradient w.r.t. (signal var, lengthscale, noise var).

    The jitter is treated as a multiple of the signal variance, so it enters
    the signal-variance derivative.
    """
    m = len(obs)
    if m < 1:
        raise ConfigurationError("log marginal likelihood needs at least one observation")
    _check_pair(obs, noise)
    r = np.abs(obs.x[:, None] - obs.x[None, :])
    k = spec(r)
    a = k + np.diag(noise.per_point_variance)
    chol, jitter = jittered_cholesky(a, spec.signal_variance, "observation covariance K + noise")
    alpha = linalg.cho_solve((chol, True), obs.y, check_finite=False)
    value = (
        -0.5 * obs.y @ alpha
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * m * math.log(2.0 * math.pi)
    )
    a_inv = linalg.cho_solve((chol, True), np.eye(m), check_finite=False)
    inner = np.outer(alpha, alpha) - a_inv

    jitter_level = jitter / spec.signal_variance
    d_sf = k / spec.signal_variance + jitter_level * np.eye(m)
    d_ell = spec.d_lengthscale(r)
    grad = np.array(
        [
            0.5 * np.sum(inner * d_sf),
            0.5 * np.sum(inner * d_ell),
            0.5 * np.sum(np.diag(inner)[noise.free]),
        ]
    )
    return LMLResult(float(value), grad)


@dataclass
class OptimizationResult:
    spec: KernelSpec
    noise: NoiseModel
    lml: float
    initial_lml: float
    converged: bool
    restarts: list = field(default_factory=list)


# box in log space for (signal var, lengthscale, noise var); keeps flat
# likelihood directions from running off to 0 or infinity
_LOG_LO = np.log([1e-8, 1e-3, NOISE_FLOOR])
_LOG_HI = np.log([1e12, 1e6, 1e12])


def _unpack(theta, spec0: KernelSpec, noise0: NoiseModel):
    sf, ell, sy = (float(v) for v in np.exp(np.clip(theta, _LOG_LO, _LOG_HI)))
    return spec0.with_params(sf, ell), noise0.with_shared(sy)


def _ascend(obs, spec0, noise0, theta0, max_iter, tol):
    """Gradient ascent in log-parameter space with Armijo backtracking.

    The trial step length comes from a Barzilai-Borwein estimate.
    """
    def evaluate(theta):
        theta = np.clip(theta, _LOG_LO, _LOG_HI)
        spec, noise = _unpack(theta, spec0, noise0)
        res = log_marginal_likelihood(obs, noise, spec)
        # chain rule to log space, projected onto the box
        g = res.gradient * np.exp(theta)
        g[(theta <= _LOG_LO) & (g < 0)] = 0.0
        g[(theta >= _LOG_HI) & (g > 0)] = 0.0
        if not (np.isfinite(res.value) and np.all(np.isfinite(g))):
            raise ConditioningError("log marginal likelihood", 0.0)
        return theta, res.value, g

    theta, f, g = evaluate(np.asarray(theta0, float))
    step = 1.0 / max(np.linalg.norm(g), 1.0)
    converged = False
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm < 1e-8:
            converged = True
            break
        t = step
        accepted = False
        while t > 1e-14:
            trial = theta + t * g
            try:
                trial, f_new, g_new = evaluate(trial)
            except ConditioningError:
                t *= 0.5
                continue
            if f_new >= f + 1e-4 * t * gnorm**2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        s, yk = trial - theta, g_new - g
        sy = s @ yk
        # ascent: BB step uses the curvature of -f
        step = float(np.clip(-(s @ s) / sy, 1e-10, 1e3)) if sy < 0 else min(2.0 * t, 1e3)
        improvement = f_new - f
        theta, f, g = trial, f_new, g_new
        if improvement <= tol * (1.0 + abs(f)):
            converged = True
            break
    return theta, f, converged


def optimize_hyperparameters(
    obs: ObservationSet,
    noise0: NoiseModel,
    spec0: KernelSpec,
    restarts: int = 5,
    seed=0,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> OptimizationResult:
    """Maximise the log marginal likelihood over (signal var, lengthscale, shared noise var).

    Restart 0 starts at the given parameters; the rest start from log-normal
    perturbations of them. Fixed noise entries are left untouched and the
    shared noise variance is floored at ``NOISE_FLOOR``. If every restart
    fails the best evaluated point is returned with ``converged=False``.
    """
    _check_pair(obs, noise0)
    initial = log_marginal_likelihood(obs, noise0, spec0).value
    if len(obs) < 2:
        return OptimizationResult(spec0, noise0, initial, initial, converged=True)

    shared0 = max(noise0.shared_variance(), NOISE_FLOOR)
    base = np.log([spec0.signal_variance, spec0.lengthscale, shared0])
    rng = np.random.default_rng(seed)
    starts = [base] + [base + rng.normal(0.0, 0.5, 3) for _ in range(max(restarts, 1) - 1)]

    best_theta, best_f, any_converged = None, -np.inf, False
    runs = []
    for theta0 in starts:
        try:
            theta, f, converged = _ascend(obs, spec0, noise0, theta0, max_iter, tol)
        except ConditioningError as exc:
            logger.debug("restart failed: %s", exc)
            runs.append({"start": np.exp(theta0).tolist(), "lml": None, "converged": False})
            continue
        runs.append({"start": np.exp(theta0).tolist(), "lml": f, "converged": converged})
        any_converged |= converged
        if f > best_f:
            best_theta, best_f = theta, f

    if best_theta is None or best_f < initial:
        if best_theta is None:
            warnings.warn("hyperparameter optimisation failed on every restart", RuntimeWarning)
        return OptimizationResult(spec0, noise0, initial, initial, converged=False, restarts=runs)
    spec, noise = _unpack(best_theta, spec0, noise0)
    if not any_converged:
        warnings.warn("hyperparameter optimisation did not converge", RuntimeWarning)
    return OptimizationResult(spec, noise, best_f, initial, any_converged, runs)
