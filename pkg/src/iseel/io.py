"""File formats: ISEELMAP grids, PGM/PPM/PNG images, fixation CSV.

All binary formats are little-endian. Writes go through a temp file in the
target directory followed by an atomic rename.
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .core import DataError, FormatError, FixationSet, Grid, ImageBuffer, as_grid

MAP_MAGIC = b"ISEELMAP"
MAP_VERSION = 1


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write payload to path via temp-file + rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"length mismatch reading {what}")
    return buf


def write_map(path: str | os.PathLike, g: Grid) -> None:
    """Serialize a grid as ISEELMAP (magic, version, width, height, f32 data)."""
    g = as_grid(g)
    h, w = g.shape
    header = MAP_MAGIC + struct.pack("<III", MAP_VERSION, w, h)
    atomic_write_bytes(path, header + g.astype("<f4").tobytes())


def read_map(path: str | os.PathLike) -> Grid:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAP_MAGIC))
        if magic != MAP_MAGIC:
            raise FormatError(f"bad magic in {path}")
        version, w, h = struct.unpack("<III", _read_exact(fh, 12, "map header"))
        if version != MAP_VERSION:
            raise FormatError(f"unsupported version {version} in {path}")
        raw = _read_exact(fh, 4 * w * h, "map payload")
        if fh.read(1):
            raise FormatError(f"trailing bytes in {path}")
    g = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(h, w)
    if not np.isfinite(g).all():
        raise FormatError(f"non-finite values in {path}")
    return g


def write_pgm(path: str | os.PathLike, g: Grid) -> None:
    """Export a grid as 8-bit binary PGM, min-max scaled to 0-255.

    A constant grid has no range and exports as all zeros.
    """
    g = as_grid(g)
    lo, hi = g.min(), g.max()
    if hi > lo:
        scaled = np.round((g - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(g)
    h, w = g.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + scaled.astype(np.uint8).tobytes())


def _read_pnm_header(fh, magic_expected: bytes):
    def token():
        # skip whitespace and '#' comments between header fields
        tok = b""
        while True:
            c = fh.read(1)
            if not c:
                raise FormatError("truncated PNM header")
            if c in b" \t\r\n":
                if tok:
                    return tok
                continue
            if c == b"#":
                while fh.read(1) not in (b"\n", b""):
                    pass
                continue
            tok += c

    magic = fh.read(2)
    if magic != magic_expected:
        raise FormatError(f"bad magic {magic!r}, expected {magic_expected!r}")
    w = int(token())
    h = int(token())
    maxval = int(token())
    if maxval != 255:
        raise FormatError(f"unsupported PNM maxval {maxval}")
    return w, h


def read_image(path: str | os.PathLike) -> ImageBuffer:
    """Load a PGM (P5), PPM (P6) or PNG image, scaled to [0, 1]."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        with open(path, "rb") as fh:
            w, h = _read_pnm_header(fh, b"P5")
            raw = _read_exact(fh, w * h, "PGM payload")
        data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
        return ImageBuffer(data / 255.0)
    if suffix == ".ppm":
        with open(path, "rb") as fh:
            w, h = _read_pnm_header(fh, b"P6")
            raw = _read_exact(fh, 3 * w * h, "PPM payload")
        data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
        return ImageBuffer(data / 255.0)
    if suffix == ".png":
        with Image.open(path) as im:
            im = im.convert("L") if im.mode in ("1", "L", "I;16", "I") else im.convert("RGB")
            data = np.asarray(im, dtype=np.float64) / 255.0
        return ImageBuffer(data)
    raise FormatError(f"unsupported image format: {path.name}")


def write_ppm(path: str | os.PathLike, img: ImageBuffer) -> None:
    """Write an image as binary PPM (P6); gray images are replicated to RGB."""
    rgb = np.clip(np.round(img.to_rgb() * 255.0), 0, 255).astype(np.uint8)
    h, w = rgb.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + rgb.tobytes())


IMAGE_SUFFIXES = (".pgm", ".ppm", ".png")


def list_images(directory: str | os.PathLike) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_fixations(
    path: str | os.PathLike,
    sizes: dict[str, tuple[int, int]] | None = None,
) -> dict[str, FixationSet]:
    """Parse a fixation CSV with header ``image_id,x,y[,observer]``.

    When ``sizes`` maps image ids to (width, height), points are
    bounds-checked at load time and offenders rejected.
    """
    rows: dict[str, list] = {}
    observers: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"empty fixation file {path}") from None
        cols = [c.strip().lower() for c in header]
        if cols[:3] != ["image_id", "x", "y"]:
            raise FormatError(f"bad fixation header {header!r} in {path}")
        has_observer = len(cols) > 3 and cols[3] == "observer"
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise FormatError(f"{path}:{lineno}: expected image_id,x,y")
            image_id = row[0].strip()
            try:
                x, y = int(row[1]), int(row[2])
            except ValueError:
                raise FormatError(
                    f"{path}:{lineno}: non-integer coordinates {row[1:3]!r}"
                ) from None
            rows.setdefault(image_id, []).append((x, y))
            if has_observer:
                observers.setdefault(image_id, []).append(
                    row[3].strip() if len(row) > 3 else ""
                )
    out: dict[str, FixationSet] = {}
    for image_id in sorted(rows):
        obs = tuple(observers[image_id]) if image_id in observers else None
        fs = FixationSet(image_id, np.array(rows[image_id], dtype=np.int64), obs)
        if sizes is not None:
            if image_id not in sizes:
                raise DataError(f"fixations reference unknown image {image_id!r}")
            w, h = sizes[image_id]
            fs.check_bounds(w, h)
        out[image_id] = fs
    return out


def write_fixations(path: str | os.PathLike, sets: dict[str, FixationSet]) -> None:
    lines = ["image_id,x,y,observer"]
    for image_id in sorted(sets):
        fs = sets[image_id]
        obs = fs.observers or ("",) * len(fs)
        for (x, y), o in zip(fs.xy, obs):
            lines.append(f"{image_id},{x},{y},{o}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())
