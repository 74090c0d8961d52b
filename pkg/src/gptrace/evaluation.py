"""Baselines and metrics: trace rasterisation, Jaccard, Dijkstra, sensitivity sweeps."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .exceptions import ConfigurationError, GPTraceError
from .image import GradientField, PolarTransform, SyntheticCase
from .tracer import TraceConfig, trace

logger = logging.getLogger(__name__)

DIJKSTRA_DELTA = 1e-3


def rasterize(trace_rows, height: int, width: int, side: str = "below") -> np.ndarray:
    """Boolean mask of pixels on or below (``r >= trace``) / above (``r <= trace``) the trace."""
    trace_rows = np.asarray(trace_rows, dtype=float)
    if trace_rows.shape != (width,):
        raise ConfigurationError(f"trace must have one value per column ({width})")
    if not np.all(np.isfinite(trace_rows)):
        raise ConfigurationError("trace contains non-finite values")
    t = np.clip(trace_rows, 0, height - 1)
    rows = np.arange(height)[:, None]
    if side == "below":
        return rows >= t[None, :]
    if side == "above":
        return rows <= t[None, :]
    raise ConfigurationError(f"side must be 'below' or 'above', got {side!r}")


def rasterize_closed(radius_trace, transform: PolarTransform, height: int, width: int) -> np.ndarray:
    """Mask of pixels enclosed by a polar radius trace."""
    yy, xx = np.mgrid[0:height, 0:width]
    r, edge = transform.radius_at(radius_trace, xx, yy)
    return r <= edge


def jaccard(a, b) -> float:
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def trace_jaccard(trace_rows, truth_rows, height: int, width: int) -> float:
    return jaccard(rasterize(trace_rows, height, width), rasterize(truth_rows, height, width))


@dataclass
class DijkstraPath:
    pixels: np.ndarray  # (k, 2) rows of (row, col), start to end
    cost: float

    def per_column(self, width: int) -> np.ndarray:
        """Row of the first path pixel visiting each column (NaN where unvisited)."""
        out = np.full(width, np.nan)
        for r, c in self.pixels[::-1]:
            out[c] = r
        return out


def dijkstra_trace(gradient: GradientField, start, end, delta: float = DIJKSTRA_DELTA) -> DijkstraPath:
    """Minimum-cost 8-connected path with per-pixel cost ``1 - G + delta``.

    ``start``/``end`` are ``(column, row)``; the start pixel's own cost is not
    counted.
    """
    m, n = gradient.shape
    s = (int(round(start[1])), int(round(start[0])))
    e = (int(round(end[1])), int(round(end[0])))
    for r, c in (s, e):
        if not (0 <= r < m and 0 <= c < n):
            raise ConfigurationError(f"endpoint (col={c}, row={r}) outside the {m}x{n} image")
    cost = 1.0 - gradient.values + delta
    pixels, total = kernels.dijkstra(cost, s, e)
    return DijkstraPath(pixels, float(total))


def fill_columns(rows: np.ndarray) -> np.ndarray:
    """Linearly interpolate NaN gaps (columns a path never visited)."""
    rows = np.asarray(rows, float).copy()
    bad = np.isnan(rows)
    if bad.all():
        raise ValueError("no visited columns")
    if bad.any():
        idx = np.arange(rows.size)
        rows[bad] = np.interp(idx[bad], idx[~bad], rows[~bad])
    return rows


# -- comparisons and sweeps -----------------------------------------------------

SWEEP_PARAMETERS = {
    "threshold": ("threshold", 0.0, 1.0),
    "curves": ("curves", 1, None),
    "keep_ratio": ("keep_ratio", 1e-9, 1.0),
    "bin_width": ("bin_width", 1, None),
    "noise_variance": ("noise_variance", 0.0, None),
    "signal_variance": ("kernel.signal_variance", 1e-12, None),
    "lengthscale": ("kernel.lengthscale", 1e-12, None),
    "density_lengthscale": ("density_lengthscale", 1e-12, None),
}
_ALIASES = {
    "T": "threshold", "L": "curves", "epsilon": "keep_ratio", "eps": "keep_ratio",
    "dx": "bin_width", "sigma_y2": "noise_variance", "sigma_f2": "signal_variance",
    "ell": "lengthscale", "ell_phi": "density_lengthscale",
}
_INTEGER = {"curves", "bin_width"}


def canonical_parameter(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in SWEEP_PARAMETERS:
        raise ConfigurationError(
            f"unknown sweep parameter {name!r}; choose from {sorted(SWEEP_PARAMETERS)}"
        )
    return name


def get_parameter(config: TraceConfig, name: str) -> float:
    path = SWEEP_PARAMETERS[canonical_parameter(name)][0]
    if path.startswith("kernel."):
        return getattr(config.kernel, path.split(".", 1)[1])
    return getattr(config, path)


def with_parameter(config: TraceConfig, name: str, value) -> TraceConfig:
    """Copy of ``config`` with one parameter replaced; raises on impossible values."""
    name = canonical_parameter(name)
    path, lo, hi = SWEEP_PARAMETERS[name]
    if name in _INTEGER:
        value = int(round(value))
    if value < lo or (hi is not None and value > hi):
        raise ConfigurationError(f"{name}={value} outside its valid range")
    if path.startswith("kernel."):
        attr = path.split(".", 1)[1]
        return replace(config, kernel=replace(config.kernel, **{attr: float(value)}))
    return replace(config, **{path: value})


def run_case(config: TraceConfig, case: SyntheticCase) -> tuple[float, float, object]:
    """Trace the case from its true endpoints; returns ``(jaccard, runtime_s, result)``."""
    m, n = case.shape
    t0 = time.perf_counter()
    result = trace(config, case.gradient, list(case.endpoints()))
    elapsed = time.perf_counter() - t0
    return trace_jaccard(result.mean, case.truth, m, n), elapsed, result


def run_dijkstra(case: SyntheticCase, delta: float = DIJKSTRA_DELTA) -> tuple[float, float, np.ndarray]:
    m, n = case.shape
    (c0, r0), (c1, r1) = case.endpoints()
    t0 = time.perf_counter()
    path = dijkstra_trace(case.gradient, (c0, r0), (c1, r1), delta)
    rows = fill_columns(path.per_column(n))
    elapsed = time.perf_counter() - t0
    return trace_jaccard(rows, case.truth, m, n), elapsed, rows


@dataclass
class SweepRow:
    parameter: str
    delta: float
    value: float
    seed: int
    jaccard: float | None
    runtime_s: float | None
    note: str = ""


def sensitivity_sweep(
    base: TraceConfig,
    case: SyntheticCase,
    parameter: str,
    deltas,
    seeds=(0,),
    relative: bool = True,
) -> list[SweepRow]:
    """Re-run the trace with one parameter perturbed to ``p0 + delta`` (or ``p0*(1+delta)``).

    Impossible values are skipped and recorded with a note.
    """
    parameter = canonical_parameter(parameter)
    p0 = get_parameter(base, parameter)
    rows = []
    for delta in deltas:
        value = p0 * (1.0 + delta) if relative else p0 + delta
        for seed in seeds:
            try:
                cfg = with_parameter(replace(base, seed=int(seed)), parameter, value)
            except ConfigurationError as exc:
                rows.append(SweepRow(parameter, float(delta), float(value), int(seed), None, None, f"skipped: {exc}"))
                continue
            try:
                score, elapsed, _ = run_case(cfg, case)
            except GPTraceError as exc:
                rows.append(SweepRow(parameter, float(delta), float(value), int(seed), None, None, f"failed: {exc}"))
                continue
            rows.append(SweepRow(parameter, float(delta), float(get_parameter(cfg, parameter)), int(seed), score, elapsed))
    return rows


def summarize_sweep(rows: list[SweepRow]) -> list[tuple[float, float]]:
    """``(delta, mean jaccard)`` per delta, skipping failed runs."""
    out = {}
    for r in rows:
        if r.jaccard is not None:
            out.setdefault(r.delta, []).append(r.jaccard)
    return [(d, float(np.mean(v))) for d, v in sorted(out.items())]


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "delta", "value", "seed", "jaccard", "runtime_s", "note"])
        for r in rows:
            w.writerow([
                r.parameter, f"{r.delta:.6g}", f"{r.value:.6g}", r.seed,
                "" if r.jaccard is None else f"{r.jaccard:.6f}",
                "" if r.runtime_s is None else f"{r.runtime_s:.3f}",
                r.note,
            ])


def write_comparison_csv(path, rows) -> None:
    """``rows``: iterable of ``(method, jaccard_percent, time_s)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "J (%)", "Time (s)"])
        for method, j, t in rows:
            w.writerow([method, f"{j:.1f}", f"{t:.3f}"])
