"""Per-cell feature maps and scene descriptors.

Two feature sources share one contract: deep-feature tensors ingested from
ISEELFEAT files, and a deterministic built-in stand-in that runs a small
oriented-gradient + color-statistic filter bank over a dyadic image pyramid.
Scene descriptors (classemes-like histogram + gist-like pooled energies)
drive similar-image retrieval.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DataError,
    FormatError,
    Grid,
    ImageBuffer,
    NumericalError,
    resize_bilinear,
)
from .io import atomic_write_bytes, _read_exact

FEAT_MAGIC = b"ISEELFEAT"
FEAT_VERSION = 1
DESC_MAGIC = b"ISEELDESC"
DESC_VERSION = 1

DEFAULT_SCALES = 3
DEFAULT_STRIDE = 8
MIN_IMAGE_SIDE = 32

#: Channels produced per pyramid scale: 8 rectified directional derivatives
#: (x+, x-, y+, y-, 45+, 45-, 135+, 135-) and 3 color statistics
#: (luminance, R-G opponent, B-Y opponent).
CHANNELS_PER_SCALE = 11

#: Channel permutation under a horizontal flip of the source image, within
#: one scale block: x-derivative polarities swap and the two diagonal
#: orientations swap with crossed polarity; y and color channels are fixed.
FLIP_LR_CHANNEL_PERM = (1, 0, 2, 3, 7, 6, 5, 4, 8, 9, 10)

_STD_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class FeatureMap:
    """Per-cell feature vectors on a spatial grid, float32.

    data has shape (grid_h, grid_w, dim); ``stride`` maps cells back to
    source-image pixels (cell j spans columns [j*stride, (j+1)*stride)).
    """

    data: np.ndarray
    stride: int
    source_w: int
    source_h: int

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise DataError(f"feature map: expected 3-D data, got {d.shape}")
        if not np.isfinite(d).all():
            raise NumericalError("feature map: non-finite values")
        if self.stride < 1:
            raise DataError("feature map: stride must be >= 1")
        gh, gw = d.shape[:2]
        if self.stride * gw < self.source_w - self.stride:
            raise DataError("feature map: grid does not cover image width")
        if self.stride * gh < self.source_h - self.stride:
            raise DataError("feature map: grid does not cover image height")
        object.__setattr__(self, "data", d)

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates (xs, ys) in source-image pixels."""
        half = (self.stride - 1) / 2.0
        xs = np.arange(self.grid_w, dtype=np.float64) * self.stride + half
        ys = np.arange(self.grid_h, dtype=np.float64) * self.stride + half
        return xs, ys

    def as_rows(self) -> np.ndarray:
        """Cells flattened row-major into an (n_cells, dim) float64 matrix."""
        return self.data.reshape(-1, self.dim).astype(np.float64)


@dataclass(frozen=True)
class SceneDescriptor:
    """Classemes-like + gist-like blocks with their combined retrieval vector."""

    classemes: np.ndarray
    gist: np.ndarray
    combined: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.classemes, dtype=np.float64)
        g = np.asarray(self.gist, dtype=np.float64)
        v = np.asarray(self.combined, dtype=np.float64)
        for name, a in (("classemes", c), ("gist", g), ("combined", v)):
            if a.ndim != 1 or not np.isfinite(a).all():
                raise DataError(f"descriptor: bad {name} block")
        if c.size and c.min() < 0:
            raise DataError("descriptor: negative classemes values")
        if v.size != c.size + g.size:
            raise DataError("descriptor: combined length != classemes + gist")
        object.__setattr__(self, "classemes", c)
        object.__setattr__(self, "gist", g)
        object.__setattr__(self, "combined", v)


def _require_size(img: ImageBuffer) -> None:
    if img.width < MIN_IMAGE_SIDE or img.height < MIN_IMAGE_SIDE:
        raise DataError(
            f"image too small: {img.width}x{img.height}, need at least "
            f"{MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
        )


def _channel_planes(rgb: np.ndarray) -> np.ndarray:
    """The 11 filter-bank responses of one pyramid level, shape (h, w, 11)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    lum = 0.299 * r + 0.587 * g + 0.114 * b
    gy, gx = np.gradient(lum)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    d1 = (gx + gy) * inv_sqrt2
    d2 = (gx - gy) * inv_sqrt2
    planes = [
        np.maximum(gx, 0.0),
        np.maximum(-gx, 0.0),
        np.maximum(gy, 0.0),
        np.maximum(-gy, 0.0),
        np.maximum(d1, 0.0),
        np.maximum(-d1, 0.0),
        np.maximum(d2, 0.0),
        np.maximum(-d2, 0.0),
        lum,
        r - g,
        b - 0.5 * (r + g),
    ]
    return np.stack(planes, axis=-1)


def _pool_mean(plane: Grid, stride: int) -> Grid:
    """Mean over stride x stride cells; partial border cells use what's there."""
    h, w = plane.shape
    row_starts = np.arange(0, h, stride)
    col_starts = np.arange(0, w, stride)
    sums = np.add.reduceat(np.add.reduceat(plane, row_starts, axis=0), col_starts, axis=1)
    rh = np.diff(np.append(row_starts, h))
    cw = np.diff(np.append(col_starts, w))
    return sums / np.outer(rh, cw)


def extract_standin_features(
    img: ImageBuffer,
    scales: int = DEFAULT_SCALES,
    stride: int = DEFAULT_STRIDE,
) -> FeatureMap:
    """Run the stand-in filter bank over a dyadic pyramid.

    Each scale contributes 11 channels pooled with the same stride on the
    downsampled image; coarser grids are bilinearly upsampled to the finest
    grid and concatenated, so dim = 11 * scales.
    """
    if scales < 1:
        raise DataError("scales must be >= 1")
    _require_size(img)
    rgb = img.to_rgb()
    h, w = rgb.shape[:2]
    gh0 = -(-h // stride)
    gw0 = -(-w // stride)
    blocks = []
    for s in range(scales):
        if s == 0:
            level = rgb
        else:
            lw, lh = max(1, w // 2**s), max(1, h // 2**s)
            level = np.stack(
                [resize_bilinear(rgb[..., c], lw, lh) for c in range(3)], axis=-1
            )
        planes = _channel_planes(level)
        for c in range(CHANNELS_PER_SCALE):
            pooled = _pool_mean(planes[..., c], stride)
            if pooled.shape != (gh0, gw0):
                pooled = resize_bilinear(pooled, gw0, gh0)
            blocks.append(pooled)
    data = np.stack(blocks, axis=-1).astype(np.float32)
    return FeatureMap(data, stride=stride, source_w=w, source_h=h)


def flip_lr_channel_perm(scales: int) -> np.ndarray:
    """Full-dim permutation matching FLIP_LR_CHANNEL_PERM on every scale block."""
    base = np.asarray(FLIP_LR_CHANNEL_PERM, dtype=np.int64)
    return np.concatenate([base + s * CHANNELS_PER_SCALE for s in range(scales)])


def _block_means(plane: Grid, blocks: int = 4) -> np.ndarray:
    h, w = plane.shape
    rb = [round(i * h / blocks) for i in range(blocks + 1)]
    cb = [round(i * w / blocks) for i in range(blocks + 1)]
    out = np.empty((blocks, blocks), dtype=np.float64)
    for i in range(blocks):
        for j in range(blocks):
            out[i, j] = plane[rb[i] : rb[i + 1], cb[j] : cb[j + 1]].mean()
    return out.ravel()


GIST_DIM = 144  # 4 orientations x 2 scales x 16 blocks + 16 luminance means


def compute_gist(img: ImageBuffer) -> np.ndarray:
    """Pooled oriented-energy scene signature, 144 dims, deterministic.

    Orientation energies |d/dx|, |d/dy|, |d/d45|, |d/d135| at full and half
    resolution are averaged on a 4x4 spatial grid (128 dims), followed by
    4x4 block luminance means (16 dims).
    """
    _require_size(img)
    lum = img.to_gray()
    h, w = lum.shape
    parts = []
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for s in (0, 1):
        level = lum if s == 0 else resize_bilinear(lum, w // 2, h // 2)
        gy, gx = np.gradient(level)
        for energy in (
            np.abs(gx),
            np.abs(gy),
            np.abs((gx + gy) * inv_sqrt2),
            np.abs((gx - gy) * inv_sqrt2),
        ):
            parts.append(_block_means(energy))
    parts.append(_block_means(lum))
    return np.concatenate(parts)


CLASSEMES_DIM = 64  # 8 hue x 4 luminance x 2 texture bins
_CLASSEMES_SMOOTHING = 0.01


def _hue(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = np.max(rgb, axis=-1)
    mn = np.min(rgb, axis=-1)
    c = mx - mn
    safe = np.where(c > 0, c, 1.0)
    hp = np.select(
        [c == 0, mx == r, mx == g],
        [0.0, np.mod((g - b) / safe, 6.0), (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0,
    )
    return hp / 6.0


def compute_standin_classemes(img: ImageBuffer) -> np.ndarray:
    """Soft-normalized 64-bin joint color/texture histogram, sums to one."""
    _require_size(img)
    rgb = img.to_rgb()
    lum = img.to_gray()
    gy, gx = np.gradient(lum)
    gmag = np.hypot(gx, gy)
    hue_bin = np.minimum((_hue(rgb) * 8).astype(np.int64), 7)
    lum_bin = np.minimum((lum * 4).astype(np.int64), 3)
    tex_bin = (gmag > np.median(gmag)).astype(np.int64)
    idx = (hue_bin * 4 + lum_bin) * 2 + tex_bin
    counts = np.bincount(idx.ravel(), minlength=CLASSEMES_DIM).astype(np.float64)
    lam = _CLASSEMES_SMOOTHING
    return (1.0 - lam) * counts / counts.sum() + lam / CLASSEMES_DIM


def descriptor_stats(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and population std of stacked raw descriptors."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise DataError("descriptor stats need an (n, dim) matrix with n >= 1")
    return raw.mean(axis=0), raw.std(axis=0)


def fold_weights(
    std: np.ndarray, classemes_len: int, weights: tuple[float, float]
) -> np.ndarray:
    """Per-dimension divisor realizing block weights on standardized values.

    Zero-variance dimensions get std clamped to 1 so they contribute 0.
    Transforming raw descriptors as (raw - mean) / fold_weights(...) equals
    concat(w_c * standardized(classemes), w_g * standardized(gist)).
    """
    w_c, w_g = weights
    if w_c <= 0 or w_g <= 0:
        raise DataError("descriptor weights must be > 0")
    std = np.asarray(std, dtype=np.float64)
    std_eff = np.where(std <= _STD_CLAMP_TOL, 1.0, std)
    scale = std_eff.copy()
    scale[:classemes_len] /= w_c
    scale[classemes_len:] /= w_g
    return scale


def make_descriptor(
    classemes: np.ndarray,
    gist: np.ndarray,
    stats: tuple[np.ndarray, np.ndarray],
    weights: tuple[float, float] = (1.0, 1.0),
) -> SceneDescriptor:
    """Standardize both blocks with bank-wide stats and concatenate."""
    classemes = np.asarray(classemes, dtype=np.float64)
    gist = np.asarray(gist, dtype=np.float64)
    if classemes.size == 0 or gist.size == 0:
        raise DataError("descriptor blocks must be non-empty")
    mean, std = stats
    raw = np.concatenate([classemes, gist])
    if raw.shape != np.shape(mean) or raw.shape != np.shape(std):
        raise DataError("descriptor stats dimension mismatch")
    scale = fold_weights(std, classemes.size, weights)
    combined = (raw - np.asarray(mean, dtype=np.float64)) / scale
    return SceneDescriptor(classemes, gist, combined)


# --- ISEELFEAT / ISEELDESC files -------------------------------------------


def write_features(path, fm: FeatureMap) -> None:
    header = FEAT_MAGIC + struct.pack(
        "<IIIIIII",
        FEAT_VERSION,
        fm.source_w,
        fm.source_h,
        fm.grid_w,
        fm.grid_h,
        fm.dim,
        fm.stride,
    )
    payload = fm.data.astype("<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def ingest_features(path) -> FeatureMap:
    """Read an ISEELFEAT file without any value transformation."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(FEAT_MAGIC))
        if magic != FEAT_MAGIC:
            raise FormatError(f"bad magic in {path}")
        fields = _read_exact(fh, 28, "feature header")
        version, sw, sh, gw, gh, dim, stride = struct.unpack("<IIIIIII", fields)
        if version != FEAT_VERSION:
            raise FormatError(f"unsupported version {version} in {path}")
        expected = 4 * gw * gh * dim
        raw = fh.read()
    if len(raw) != expected:
        raise FormatError(f"length mismatch in {path}: {len(raw)} != {expected}")
    data = np.frombuffer(raw, dtype="<f4").reshape(gh, gw, dim)
    if not np.isfinite(data).all():
        raise FormatError(f"non-finite values in {path}")
    return FeatureMap(data, stride=stride, source_w=sw, source_h=sh)


def write_descriptor_blocks(path, classemes: np.ndarray, gist: np.ndarray) -> None:
    classemes = np.asarray(classemes, dtype=np.float64)
    gist = np.asarray(gist, dtype=np.float64)
    header = DESC_MAGIC + struct.pack("<III", DESC_VERSION, classemes.size, gist.size)
    payload = np.concatenate([classemes, gist]).astype("<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_descriptor_blocks(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(DESC_MAGIC))
        if magic != DESC_MAGIC:
            raise FormatError(f"bad magic in {path}")
        version, clen, glen = struct.unpack("<III", _read_exact(fh, 12, "descriptor header"))
        if version != DESC_VERSION:
            raise FormatError(f"unsupported version {version} in {path}")
        raw = fh.read()
    if len(raw) != 4 * (clen + glen):
        raise FormatError(f"length mismatch in {path}")
    vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if not np.isfinite(vec).all():
        raise FormatError(f"non-finite values in {path}")
    return vec[:clen], vec[clen:]
