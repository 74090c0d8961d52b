"""Image I/O, gradient maps, polar warping and the synthetic sinusoid generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from . import kernels
from .exceptions import ConfigurationError


# -- I/O -----------------------------------------------------------------------

def load_grayscale(path) -> np.ndarray:
    """Read a PGM (P2/P5) or PNG file as a float grid scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=float)
                top = 65535.0 if im.mode.startswith("I;16") or arr.max() > 255 else 255.0
                return arr / top
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=float) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def save_grayscale(path, grid, bits: int = 8) -> Path:
    """Write a [0, 1] grid as 8-bit PGM/PNG (or 16-bit PNG with ``bits=16``)."""
    path = Path(path)
    grid = np.clip(np.asarray(grid, dtype=float), 0.0, 1.0)
    if bits == 16:
        if path.suffix.lower() != ".png":
            raise ConfigurationError("16-bit output is only supported for PNG")
        Image.fromarray(np.round(grid * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.round(grid * 255).astype(np.uint8), mode="L").save(path)
    return path


# -- gradient field ------------------------------------------------------------

@dataclass
class GradientField:
    """Edge-response map on an ``M x N`` grid with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise ConfigurationError("gradient field must be a non-empty 2-D grid")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1 + 1e-12:
            raise ConfigurationError("gradient values must lie in [0, 1]")
        self.values = np.minimum(v, 1.0)

    @classmethod
    def from_array(cls, arr) -> "GradientField":
        """Rescale an arbitrary non-negative response map so its maximum is 1."""
        arr = np.abs(np.asarray(arr, dtype=float))
        top = arr.max() if arr.size else 0.0
        return cls(arr / top if top > 0 else np.zeros_like(arr))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def sample(self, x, y):
        return bilinear(self, x, y)


def gradient_magnitude(image, sigma: float = 1.0) -> GradientField:
    """Sobel magnitude of the Gaussian-smoothed image, rescaled to max 1."""
    image = np.asarray(image, dtype=float)
    if image.size == 0:
        raise ConfigurationError("empty image")
    smooth = ndimage.gaussian_filter(image, sigma, mode="nearest") if sigma > 0 else image
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    # flat images leave round-off residue; treat it as no response
    mag[mag < 1e-12 * max(1.0, np.abs(image).max())] = 0.0
    return GradientField.from_array(mag)


def bilinear(field: GradientField | np.ndarray, x, y):
    """Bilinear sample at real (column, row); zero outside ``[0, N-1] x [0, M-1]``."""
    values = field.values if isinstance(field, GradientField) else np.asarray(field, float)
    out = kernels.bilinear(values, x, y)
    return float(out) if np.ndim(out) == 0 else out


# -- polar transform -----------------------------------------------------------

@dataclass(frozen=True)
class PolarTransform:
    """Maps a closed contour around ``center`` to a radius-vs-angle curve.

    Polar images have radius along rows and angle along columns, so a
    star-shaped contour becomes an injective function of the column.
    """

    center: tuple[float, float]  # (x, y)
    max_radius: float
    radial_samples: int
    angular_samples: int

    def __post_init__(self):
        if self.radial_samples < 2 or self.angular_samples < 2:
            raise ConfigurationError("polar transform needs at least 2 radial and angular samples")
        if not self.max_radius > 0:
            raise ConfigurationError("max_radius must be positive")

    @property
    def radius_step(self) -> float:
        return self.max_radius / (self.radial_samples - 1)

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.angular_samples) / self.angular_samples

    def warp(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=float)
        radii = np.arange(self.radial_samples) * self.radius_step
        theta = self.angles
        cx, cy = self.center
        xs = cx + radii[:, None] * np.cos(theta)[None, :]
        ys = cy + radii[:, None] * np.sin(theta)[None, :]
        return kernels.bilinear(image, xs, ys)

    def unwarp(self, trace) -> np.ndarray:
        """Radius trace (in polar row units, one per angle column) to Cartesian ``(x, y)`` points."""
        trace = np.asarray(trace, dtype=float)
        if trace.size != self.angular_samples:
            raise ConfigurationError("trace length must equal angular_samples")
        r = trace * self.radius_step
        cx, cy = self.center
        return np.column_stack([cx + r * np.cos(self.angles), cy + r * np.sin(self.angles)])

    def radius_at(self, trace, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Pixel radii and the trace's (periodically interpolated) radius at each pixel's angle."""
        trace = np.asarray(trace, dtype=float) * self.radius_step
        cx, cy = self.center
        dx = np.asarray(x, float) - cx
        dy = np.asarray(y, float) - cy
        theta = np.mod(np.arctan2(dy, dx), 2 * np.pi)
        pos = theta / (2 * np.pi) * self.angular_samples
        i0 = np.floor(pos).astype(int) % self.angular_samples
        i1 = (i0 + 1) % self.angular_samples
        frac = pos - np.floor(pos)
        return np.hypot(dx, dy), trace[i0] * (1 - frac) + trace[i1] * frac


def _default_radius(shape, center) -> float:
    m, n = shape
    cx, cy = center
    return float(min(cx, cy, n - 1 - cx, m - 1 - cy))


def to_polar(image, center, radial_samples: int, angular_samples: int, max_radius: float | None = None):
    """Warp ``image`` about ``center=(x, y)``; returns ``(polar_image, transform)``."""
    image = np.asarray(image, dtype=float)
    m, n = image.shape
    cx, cy = center
    if not (0 <= cx <= n - 1 and 0 <= cy <= m - 1):
        raise ConfigurationError(f"polar centre {center} lies outside the {m}x{n} image")
    if max_radius is None:
        max_radius = _default_radius(image.shape, center)
        if max_radius <= 0:
            raise ConfigurationError("polar centre sits on the image border")
    transform = PolarTransform((float(cx), float(cy)), float(max_radius), int(radial_samples), int(angular_samples))
    return transform.warp(image), transform


def trace_from_polar(trace, transform: PolarTransform) -> np.ndarray:
    """Closed Cartesian curve from a radius-per-angle trace; the first point is repeated at the end."""
    pts = transform.unwarp(trace)
    return np.vstack([pts, pts[:1]])


# -- synthetic test case -------------------------------------------------------

@dataclass
class SyntheticCase:
    image: np.ndarray
    gradient: GradientField
    truth: np.ndarray  # row of the edge at every column
    occlusion_mask: np.ndarray  # True on occluded columns
    params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape

    def endpoints(self) -> tuple[tuple[int, float], tuple[int, float]]:
        """Rounded (column, row) pairs of the true edge at both image borders."""
        n = self.truth.size
        return (0, float(np.round(self.truth[0]))), (n - 1, float(np.round(self.truth[-1])))

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_grayscale(directory / "image.png", self.image)
        save_grayscale(directory / "gradient.png", self.gradient.values, bits=16)
        write_truth_csv(directory / "truth.csv", self.truth)
        with open(directory / "case.json", "w") as fh:
            json.dump(self.params, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return directory


def write_truth_csv(path, truth) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["column", "row"])
        for c, r in enumerate(np.asarray(truth, float)):
            writer.writerow([c, f"{r:.6f}"])


def read_truth_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise OSError(f"empty truth file {path}")
    cols = np.array([int(r["column"]) for r in rows])
    vals = np.array([float(r["row"]) for r in rows])
    out = np.full(cols.max() + 1, np.nan)
    out[cols] = vals
    return out


DEFAULT_OCCLUSIONS = ((420, 460), (585, 625))


def make_sinusoid_case(
    M: int = 500,
    N: int = 720,
    amplitude: float = 75.0,
    periods: float = 4.0,
    noise_level: float = 0.35,
    occlusion_spans=DEFAULT_OCCLUSIONS,
    seed: int = 0,
    *,
    degrade_from: float = 0.5,
    contrast: float = 0.5,
    shift: float = 0.0,
) -> SyntheticCase:
    """Noisy, partially occluded sinusoidal step edge.

    The edge row is ``M/2 + shift + amplitude*sin(2*pi*periods*x/N)``, drawn as an
    anti-aliased step of height ``contrast`` (brighter below). Gaussian pixel
    noise with standard deviation ``noise_level`` is added from column
    ``degrade_from*N`` onwards (``degrade_from=0`` degrades the whole image).
    Occlusion spans are inclusive column ranges on which the gradient is zeroed.
    """
    if M < 3 or N < 3:
        raise ConfigurationError("image must be at least 3x3")
    if amplitude < 0 or M / 2 + abs(shift) + amplitude > M - 1 - 1e-9 or M / 2 - abs(shift) - amplitude < 0:
        raise ConfigurationError(f"amplitude {amplitude} does not fit inside image height {M}")
    if noise_level < 0:
        raise ConfigurationError("noise_level must be non-negative")
    rng = np.random.default_rng(seed)
    cols = np.arange(N)
    truth = M / 2 + shift + amplitude * np.sin(2 * np.pi * periods * cols / N)
    rows = np.arange(M)[:, None]
    step = np.clip(rows + 0.5 - truth[None, :], 0.0, 1.0)
    base = 0.5 - contrast / 2
    image = base + contrast * step
    if noise_level > 0:
        start = int(math.floor(degrade_from * N))
        image[:, start:] += rng.normal(0.0, noise_level, size=(M, N - start))
    image = np.clip(image, 0.0, 1.0)

    grad = gradient_magnitude(image).values.copy()
    mask = np.zeros(N, bool)
    spans = []
    for span in occlusion_spans or ():
        a, b = int(span[0]), int(span[1])
        if a > b:
            a, b = b, a
        a, b = max(a, 0), min(b, N - 1)
        if a <= b:
            mask[a : b + 1] = True
            spans.append([a, b])
    grad[:, mask] = 0.0
    params = dict(
        M=M, N=N, amplitude=amplitude, periods=periods, noise_level=noise_level,
        occlusion_spans=spans, seed=seed, degrade_from=degrade_from, contrast=contrast, shift=shift,
    )
    return SyntheticCase(image, GradientField.from_array(grad), truth, mask, params)
