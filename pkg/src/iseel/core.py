"""Raster, fixation and density-map primitives shared by the whole toolkit.

A "grid" throughout this package is a plain 2-D float64 numpy array
(row-major, finite values). Images, feature planes, saliency maps and
fixation densities all ride on it; the wrapper types below only add the
invariants that matter (value range for images, normalization tag for
densities).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

Grid = np.ndarray

SUMS_TO_ONE = "sums-to-one"
MAX_ONE = "max-one"
RAW = "raw"

#: Default ground-truth density bandwidth as a fraction of max(width, height).
#: Roughly one degree of visual angle in common eye-tracking setups.
DEFAULT_SIGMA_GT_FRACTION = 0.03


class IseelError(Exception):
    """Base class for toolkit errors."""


class DataError(IseelError):
    """Invalid or inconsistent input data (empty sets, shape mismatches...)."""


class FormatError(IseelError):
    """Malformed or unsupported file content."""


class NumericalError(IseelError):
    """Non-finite values or degenerate numerical results."""


def as_grid(a, name: str = "grid") -> Grid:
    """Coerce to a finite 2-D float64 array, raising DataError otherwise."""
    g = np.asarray(a, dtype=np.float64)
    if g.ndim != 2:
        raise DataError(f"{name}: expected 2-D array, got shape {g.shape}")
    if not np.isfinite(g).all():
        raise NumericalError(f"{name}: non-finite values")
    return g


@dataclass(frozen=True)
class ImageBuffer:
    """A gray or RGB raster with values in [0, 1].

    data has shape (height, width) for gray or (height, width, 3) for color.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            pass
        elif d.ndim == 3 and d.shape[2] == 3:
            pass
        else:
            raise DataError(f"image: bad shape {d.shape}")
        if not np.isfinite(d).all():
            raise NumericalError("image: non-finite values")
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise DataError("image: values outside [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def to_gray(self) -> Grid:
        """Rec.601 luminance as a grid (identity for gray images)."""
        if self.data.ndim == 2:
            return self.data.copy()
        r, g, b = self.data[..., 0], self.data[..., 1], self.data[..., 2]
        return 0.299 * r + 0.587 * g + 0.114 * b

    def to_rgb(self) -> np.ndarray:
        if self.data.ndim == 3:
            return self.data
        return np.repeat(self.data[..., None], 3, axis=2)

    def flip_lr(self) -> "ImageBuffer":
        return ImageBuffer(self.data[:, ::-1].copy())


@dataclass(frozen=True)
class FixationSet:
    """Fixation points of one image: 0-indexed integer pixel coordinates.

    xy has shape (N, 2) with columns (x, y). Observer labels are optional
    and carried only for bookkeeping.
    """

    image_id: str
    xy: np.ndarray
    observers: tuple[str, ...] | None = None

    def __post_init__(self):
        pts = np.asarray(self.xy, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DataError(f"fixations[{self.image_id}]: expected (N, 2) points")
        if self.observers is not None and len(self.observers) != len(pts):
            raise DataError(f"fixations[{self.image_id}]: observer count mismatch")
        object.__setattr__(self, "xy", pts)

    def __len__(self) -> int:
        return len(self.xy)

    def check_bounds(self, width: int, height: int) -> None:
        """Reject any point outside the image (points are pixel centers)."""
        x, y = self.xy[:, 0], self.xy[:, 1]
        bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"fixations[{self.image_id}]: point {tuple(self.xy[i])} outside "
                f"{width}x{height} image"
            )

    def flip_lr(self, width: int) -> "FixationSet":
        pts = self.xy.copy()
        pts[:, 0] = width - 1 - pts[:, 0]
        return FixationSet(self.image_id, pts, self.observers)


@dataclass(frozen=True)
class DensityMap:
    """A non-negative grid with a normalization tag."""

    grid: Grid
    normalization: str = RAW

    def __post_init__(self):
        g = as_grid(self.grid, "density")
        if g.min() < 0.0:
            raise DataError("density: negative values")
        if self.normalization == SUMS_TO_ONE:
            if abs(g.sum() - 1.0) > 1e-9:
                raise DataError("density: sum != 1 under sums-to-one tag")
        elif self.normalization == MAX_ONE:
            if abs(g.max() - 1.0) > 1e-9:
                raise DataError("density: max != 1 under max-one tag")
        elif self.normalization != RAW:
            raise DataError(f"density: unknown tag {self.normalization!r}")
        object.__setattr__(self, "grid", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


def default_sigma_gt(width: int, height: int) -> float:
    return DEFAULT_SIGMA_GT_FRACTION * max(width, height)


def normalize(g: Grid, mode: str) -> DensityMap:
    """Tag a non-negative grid as sums-to-one or max-one, rescaling it.

    An all-zero grid cannot be normalized and raises DataError.
    """
    g = as_grid(g)
    if g.min() < 0.0:
        raise DataError("normalize: negative values")
    if mode == SUMS_TO_ONE:
        total = g.sum()
        if total <= 0.0:
            raise DataError("degenerate map")
        return DensityMap(g / total, SUMS_TO_ONE)
    if mode == MAX_ONE:
        peak = g.max()
        if peak <= 0.0:
            raise DataError("degenerate map")
        return DensityMap(g / peak, MAX_ONE)
    if mode == RAW:
        return DensityMap(g, RAW)
    raise DataError(f"normalize: unknown mode {mode!r}")


def fixations_to_density(
    fix: FixationSet, width: int, height: int, sigma_gt: float
) -> DensityMap:
    """Sum an isotropic Gaussian of std ``sigma_gt`` per fixation, sums-to-one.

    Kernels are evaluated exactly (separable outer products, no truncation)
    at every pixel center, so the result matches a direct per-cell Gaussian
    evaluation bit-for-bit.
    """
    if len(fix) == 0:
        raise DataError("no fixations")
    if sigma_gt <= 0:
        raise DataError("sigma_gt must be > 0")
    fix.check_bounds(width, height)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    inv = 1.0 / (2.0 * sigma_gt * sigma_gt)
    acc = np.zeros((height, width), dtype=np.float64)
    for fx, fy in fix.xy:
        kx = np.exp(-((xs - fx) ** 2) * inv)
        ky = np.exp(-((ys - fy) ** 2) * inv)
        acc += np.outer(ky, kx)
    return normalize(acc, SUMS_TO_ONE)


def sample_bilinear(g: Grid, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous pixel coordinates, clamped to the border.

    Coordinates address pixel centers: (0, 0) is the center of the top-left
    cell. xs and ys must broadcast against each other.
    """
    g = as_grid(g)
    h, w = g.shape
    x = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = (1.0 - fx) * g[y0, x0] + fx * g[y0, x1]
    bot = (1.0 - fx) * g[y1, x0] + fx * g[y1, x1]
    return (1.0 - fy) * top + fy * bot


def resize_bilinear(g: Grid, out_w: int, out_h: int) -> Grid:
    """Resize a grid with half-pixel-center bilinear interpolation.

    Output cell (i, j) samples the input at
    ((j + 0.5) * w_in / out_w - 0.5, (i + 0.5) * h_in / out_h - 0.5),
    clamped to the border. Identity sizes reproduce the input exactly and a
    constant grid maps to the same constant.
    """
    g = as_grid(g)
    if out_w < 1 or out_h < 1:
        raise DataError("resize: target size must be >= 1")
    h, w = g.shape
    if (out_w, out_h) == (w, h):
        return g.copy()
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    return sample_bilinear(g, xs[None, :], ys[:, None])


def gaussian_smooth(g: Grid, sigma: float) -> Grid:
    """Gaussian blur with reflective borders; sigma = 0 is the identity.

    Reflective (edge-duplicating) padding plus a normalized symmetric kernel
    preserves total mass exactly, up to float rounding.
    """
    g = as_grid(g)
    if sigma < 0:
        raise DataError("smooth: sigma must be >= 0")
    if sigma == 0:
        return g.copy()
    return ndimage.gaussian_filter(g, sigma=sigma, mode="reflect")
