"""Command-line interface: generate cases, trace images and sequences, evaluate, sweep.

Exit codes: 0 success (a non-converged trace still exits 0, flagged in its
report), 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .evaluation import (
    SWEEP_PARAMETERS,
    canonical_parameter,
    run_case,
    run_dijkstra,
    sensitivity_sweep,
    summarize_sweep,
    trace_jaccard,
    write_comparison_csv,
    write_sweep_csv,
)
from .exceptions import ConditioningError, ConfigurationError, LostEdgeError
from .gp_core import KernelSpec, ObservationSet
from .image import (
    DEFAULT_OCCLUSIONS,
    GradientField,
    SyntheticCase,
    gradient_magnitude,
    load_grayscale,
    make_sinusoid_case,
    read_truth_csv,
    to_polar,
    trace_from_polar,
)
from .tracer import TraceConfig, TraceResult, trace, trace_sequence

logger = logging.getLogger("gptrace")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


# -- run configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    """Everything a ``trace`` run needs, loaded from a JSON file.

    The source is ``image`` (Sobel magnitude is computed) or ``case`` (a
    directory written by ``generate``; endpoints and truth come from it).
    ``gradient`` names a precomputed gradient image that replaces the Sobel
    map, or serves alone when there is no image.
    """

    image: str | None = None
    gradient: str | None = None
    case: str | None = None
    endpoints: list | None = None  # [[column, row], [column, row]]
    out: str = "out"
    polar_center: list | None = None  # [x, y]
    polar_radial: int = 200
    polar_angular: int = 360
    polar_max_radius: float | None = None
    gradient_sigma: float = 1.0
    trace: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        if base is not None:
            for key in ("image", "gradient", "case"):
                val = getattr(cfg, key)
                if val is not None and not Path(val).is_absolute():
                    setattr(cfg, key, str(base / val))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        text = path.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        return cls.from_dict(data, path.parent)

    def validate(self) -> None:
        if self.case is not None and self.image is not None:
            raise ConfigurationError("give either image or case, not both")
        if self.image is None and self.gradient is None and self.case is None:
            raise ConfigurationError("config needs an image, gradient or case")
        if self.case is None and self.endpoints is None:
            raise ConfigurationError("endpoints are required unless tracing a generated case")
        if self.endpoints is not None:
            pts = np.asarray(self.endpoints, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
                raise ConfigurationError("endpoints must be a list of [column, row] pairs")
        if self.polar_center is not None and len(self.polar_center) != 2:
            raise ConfigurationError("polar_center must be [x, y]")
        self.trace_config()  # validates the tracer section

    def trace_config(self, seed: int | None = None) -> TraceConfig:
        return trace_config_from_dict(self.trace, seed)


def trace_config_from_dict(data: dict, seed: int | None = None) -> TraceConfig:
    """Tracer parameters from a plain mapping; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigurationError("trace section must be an object")
    params = dict(data)
    unknown = sorted(set(params) - {f.name for f in fields(TraceConfig)})
    if unknown:
        raise ConfigurationError(f"unknown trace keys: {', '.join(unknown)}")
    if isinstance(params.get("kernel"), dict):
        bad = sorted(set(params["kernel"]) - {f.name for f in fields(KernelSpec)})
        if bad:
            raise ConfigurationError(f"unknown kernel keys: {', '.join(bad)}")
        params["kernel"] = KernelSpec(**params["kernel"])
    if seed is not None:
        params["seed"] = seed
    return TraceConfig(**params)


def _parse_pair(text: str, what: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"{what} must look like X,Y") from None
    return a, b


def _parse_span(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise ConfigurationError(f"occlusion must look like A:B, got {text!r}") from None
    return a, b


def read_points_csv(path) -> ObservationSet:
    """``column,row`` or ``column,mean,...`` CSV as an observation set."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise OSError(f"{path}: no points")
    key = "row" if "row" in rows[0] else "mean" if "mean" in rows[0] else None
    if key is None or "column" not in rows[0]:
        raise ConfigurationError(f"{path}: expected 'column' and 'row' (or 'mean') columns")
    pts = sorted((float(r["column"]), float(r[key])) for r in rows)
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return ObservationSet(x, np.round(y))


def write_trace_csv(path, result: TraceResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "mean", "lower", "upper"])
        for c, m, lo, hi in zip(result.columns, result.mean, result.lower, result.upper):
            w.writerow([int(c), f"{m:.6f}", f"{lo:.6f}", f"{hi:.6f}"])


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def draw_overlay(path, image, curves) -> None:
    """Save an RGB copy of ``image`` with polylines ``[(points (k, 2) as x, y), colour]``."""
    base = (np.clip(image, 0, 1) * 255).astype(np.uint8)
    canvas = Image.fromarray(base, mode="L").convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for pts, colour in curves:
        pts = [(float(x), float(y)) for x, y in pts if np.isfinite(x) and np.isfinite(y)]
        if len(pts) >= 2:
            draw.line(pts, fill=colour, width=1)
    canvas.save(path)


def _open_curves(result: TraceResult):
    cols = result.columns.astype(float)
    return [
        (np.column_stack([cols, result.lower]), (0, 120, 255)),
        (np.column_stack([cols, result.upper]), (0, 120, 255)),
        (np.column_stack([cols, result.mean]), (255, 0, 0)),
    ]


# -- inputs ------------------------------------------------------------------------

@dataclass
class Inputs:
    image: np.ndarray
    gradient: GradientField
    endpoints: list
    truth: np.ndarray | None = None


def load_case(directory) -> SyntheticCase:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such case directory: {directory}")
    missing = [n for n in ("image.png", "gradient.png", "truth.csv") if not (directory / n).exists()]
    if missing:
        raise FileNotFoundError(f"{directory} is missing {', '.join(missing)}")
    params = {}
    if (directory / "case.json").exists():
        params = json.loads((directory / "case.json").read_text())
    image = load_grayscale(directory / "image.png")
    grad = GradientField.from_array(load_grayscale(directory / "gradient.png"))
    truth = read_truth_csv(directory / "truth.csv")
    mask = np.all(grad.values == 0, axis=0)
    return SyntheticCase(image, grad, truth, mask, params)


def resolve_inputs(cfg: RunConfig) -> Inputs:
    truth = None
    if cfg.case is not None:
        case = load_case(cfg.case)
        image, grad, truth = case.image, case.gradient, case.truth
        endpoints = [list(p) for p in case.endpoints()]
    else:
        image = load_grayscale(cfg.image) if cfg.image else None
        grad = gradient_magnitude(image, cfg.gradient_sigma) if image is not None else None
        endpoints = cfg.endpoints
    if cfg.gradient:
        grad = GradientField.from_array(load_grayscale(cfg.gradient))
        if image is None:
            image = grad.values
    if cfg.endpoints is not None:
        endpoints = cfg.endpoints
    if grad.shape != image.shape:
        raise ConfigurationError(f"gradient {grad.shape} and image {image.shape} differ in shape")
    return Inputs(image, grad, endpoints, truth)


# -- commands ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    spans = [_parse_span(s) for s in args.occlusion] if args.occlusion else list(DEFAULT_OCCLUSIONS)
    if args.no_occlusion:
        spans = []
    case = make_sinusoid_case(
        M=args.height, N=args.width, amplitude=args.amplitude, periods=args.periods,
        noise_level=args.noise, occlusion_spans=spans, seed=args.seed,
        degrade_from=args.degrade_from, shift=args.shift,
    )
    out = case.save(args.out)
    print(f"wrote {out}/image.png, gradient.png, truth.csv, case.json")
    return EXIT_OK


def _trace_cartesian(cfg: RunConfig, tcfg: TraceConfig, inputs: Inputs, init_pixels) -> tuple[TraceResult, dict]:
    init = init_pixels if init_pixels is not None else inputs.endpoints
    result = trace(tcfg, inputs.gradient, init)
    extra = {}
    if inputs.truth is not None:
        m, n = inputs.gradient.shape
        extra["jaccard"] = trace_jaccard(result.mean, inputs.truth, m, n)
    return result, extra


def _trace_polar(cfg: RunConfig, tcfg: TraceConfig, inputs: Inputs, center, init_pixels):
    """Trace a closed contour: warp about ``center``, trace radius vs angle, map back."""
    if cfg.gradient is None and cfg.case is None:
        source = inputs.image
        polar_img, tf = to_polar(source, center, cfg.polar_radial, cfg.polar_angular, cfg.polar_max_radius)
        grad = gradient_magnitude(polar_img, cfg.gradient_sigma)
    else:
        polar_grad, tf = to_polar(inputs.gradient.values, center, cfg.polar_radial, cfg.polar_angular, cfg.polar_max_radius)
        grad = GradientField.from_array(polar_grad)
    init = init_pixels if init_pixels is not None else inputs.endpoints
    result = trace(tcfg, grad, init)
    contour = trace_from_polar(result.mean, tf)
    extra = {"polar_center": list(center), "polar_radius_step": tf.radius_step}
    return result, extra, tf, contour


def cmd_trace(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.out:
        cfg.out = args.out
    tcfg = cfg.trace_config(args.seed)
    center = _parse_pair(args.polar_center, "--polar-center") if args.polar_center else (
        tuple(cfg.polar_center) if cfg.polar_center else None
    )
    if args.gradient:
        cfg.gradient = args.gradient
    inputs = resolve_inputs(cfg)
    init_pixels = read_points_csv(args.init_pixels) if args.init_pixels else None
    if init_pixels is None and inputs.endpoints is None:
        raise ConfigurationError("no endpoints given")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if center is None:
        result, extra = _trace_cartesian(cfg, tcfg, inputs, init_pixels)
        overlay = _open_curves(result)
    else:
        result, extra, tf, contour = _trace_polar(cfg, tcfg, inputs, center, init_pixels)
        lower = trace_from_polar(np.maximum(result.lower, 0), tf)
        upper = trace_from_polar(result.upper, tf)
        overlay = [(lower, (0, 120, 255)), (upper, (0, 120, 255)), (contour, (255, 0, 0))]
        with open(out / "contour.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y"])
            for x, y in contour:
                w.writerow([f"{x:.6f}", f"{y:.6f}"])

    write_trace_csv(out / "trace.csv", result)
    report = result.report()
    report.update(extra)
    report["config"] = tcfg.to_dict()
    report["init_points"] = len(init_pixels) if init_pixels is not None else len(inputs.endpoints)
    write_report(out / "report.json", report)
    draw_overlay(out / "overlay.png", inputs.image, overlay)

    status = "converged" if result.converged else "NOT converged (flagged in report)"
    line = f"{status} after {result.iterations} iterations in {result.runtime_s:.2f}s"
    if "jaccard" in extra:
        line += f"; jaccard {extra['jaccard']:.4f}"
    print(line)
    return EXIT_OK


def cmd_sequence(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.out:
        cfg.out = args.out
    tcfg = cfg.trace_config(args.seed)
    if not args.frames:
        raise ConfigurationError("sequence needs at least one frame")
    if cfg.endpoints is None:
        raise ConfigurationError("sequence mode needs endpoints in the config")
    frames = []
    for f in args.frames:
        p = Path(f)
        if p.is_dir():
            frames.append(load_case(p).gradient)
        else:
            frames.append(gradient_magnitude(load_grayscale(p), cfg.gradient_sigma))
    stride = math.inf if args.stride <= 0 else args.stride
    results = trace_sequence(tcfg, frames, cfg.endpoints, stride=stride)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for fr in results:
        entry = {"frame": fr.index, "init_points": fr.init_size, "ok": fr.ok, "error": fr.error}
        if fr.ok:
            write_trace_csv(out / f"trace_{fr.index:03d}.csv", fr.result)
            entry.update(iterations=fr.result.iterations, converged=fr.result.converged)
        summary.append(entry)
        print(f"frame {fr.index}: " + (f"{fr.result.iterations} iterations" if fr.ok else f"failed ({fr.error})"))
    write_report(out / "sequence.json", {"stride": args.stride, "frames": summary})
    return EXIT_OK


def _base_config(path, seed) -> TraceConfig:
    """Tracer parameters from a run config (its ``trace`` section) or a bare mapping."""
    if path is None:
        return TraceConfig(seed=seed if seed is not None else 0)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(data, dict) and "trace" in data:
        unknown = sorted(set(data) - {f.name for f in fields(RunConfig)})
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        data = data["trace"]
    return trace_config_from_dict(data, seed)


def cmd_evaluate(args) -> int:
    case = load_case(args.case)
    tcfg = _base_config(args.config, args.seed)
    j_gp, t_gp, result = run_case(tcfg, case)
    j_dk, t_dk, rows = run_dijkstra(case)
    out = Path(args.out) if args.out else Path(args.case)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(out / "comparison.csv", [("gp-trace", 100 * j_gp, t_gp), ("dijkstra", 100 * j_dk, t_dk)])
    print(f"{'method':<10} {'J (%)':>7} {'Time (s)':>9}")
    print(f"{'gp-trace':<10} {100 * j_gp:7.1f} {t_gp:9.2f}")
    print(f"{'dijkstra':<10} {100 * j_dk:7.1f} {t_dk:9.2f}")
    if not result.converged:
        print("note: gp-trace did not converge within max_iterations")
    return EXIT_OK


def _parse_range(text: str, count: int, seed: int) -> list[float]:
    """``LO:HI`` gives ``count`` uniform random deltas (plus 0); ``a,b,c`` is an explicit list."""
    if ":" in text:
        try:
            lo, hi = (float(v) for v in text.split(":"))
        except ValueError:
            raise ConfigurationError(f"--range must be LO:HI or a comma list, got {text!r}") from None
        rng = np.random.default_rng(seed)
        return [0.0] + sorted(rng.uniform(lo, hi, count).tolist())
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigurationError(f"--range must be LO:HI or a comma list, got {text!r}") from None


def cmd_sweep(args) -> int:
    case = load_case(args.case)
    base = _base_config(args.config, args.seed)
    param = canonical_parameter(args.param)
    deltas = _parse_range(args.range, args.count, base.seed)
    seeds = [base.seed + k for k in range(args.repeats)]
    rows = sensitivity_sweep(base, case, param, deltas, seeds=seeds, relative=not args.absolute)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out, rows)
    for d, j in summarize_sweep(rows):
        print(f"{param} delta {d:+.3f}: mean jaccard {j:.4f}")
    skipped = sum(1 for r in rows if r.jaccard is None)
    if skipped:
        print(f"{skipped} run(s) skipped or failed; see the note column")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gptrace", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic noisy, occluded sinusoid case")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--height", type=int, default=500)
    g.add_argument("--width", type=int, default=720)
    g.add_argument("--amplitude", type=float, default=75.0)
    g.add_argument("--periods", type=float, default=4.0)
    g.add_argument("--noise", type=float, default=0.35)
    g.add_argument("--degrade-from", type=float, default=0.5, help="fraction of the width where noise starts")
    g.add_argument("--shift", type=float, default=0.0, help="vertical offset of the edge")
    g.add_argument("--occlusion", action="append", metavar="A:B", help="zero the gradient on columns A..B (repeatable)")
    g.add_argument("--no-occlusion", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("trace", help="trace one edge")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--gradient", help="precomputed gradient image to use instead of Sobel")
    t.add_argument("--polar-center", metavar="X,Y", help="trace a closed contour around this point")
    t.add_argument("--init-pixels", metavar="FILE", help="CSV of initial pixels (column,row or a trace CSV)")
    t.set_defaults(func=cmd_trace)

    s = sub.add_parser("sequence", help="trace the same edge through consecutive frames")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--stride", type=int, default=4, help="propagate every K-th pixel (0: endpoints only)")
    s.add_argument("frames", nargs="+", help="frame images or case directories, in order")
    s.set_defaults(func=cmd_sequence)

    e = sub.add_parser("evaluate", help="compare against Dijkstra on a generated case")
    e.add_argument("case")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help="one-parameter sensitivity sweep on a generated case")
    w.add_argument("case")
    w.add_argument("--param", required=True, help=f"one of {', '.join(sorted(SWEEP_PARAMETERS))}")
    w.add_argument("--range", required=True, metavar="LO:HI|a,b,..", help="relative deltas")
    w.add_argument("--count", type=int, default=10)
    w.add_argument("--repeats", type=int, default=1, help="seeds per value")
    w.add_argument("--absolute", action="store_true", help="deltas are added, not relative")
    w.add_argument("--config")
    w.add_argument("--seed", type=int)
    w.add_argument("--out", default="sweep.csv")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LostEdgeError, ConditioningError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
