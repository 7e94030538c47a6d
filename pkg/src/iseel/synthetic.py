"""Self-contained test corpora: blob scenes with planted fixations.

Each scene carries 1-3 Gaussian-contrast blobs over textured noise.
Scenes belong to families that share a blob layout and a hue, so images
within a family look alike (layout and color) while families differ;
fixations are sampled around blob centers. Everything is a pure function
of the corpus spec, so regenerated corpora are byte-identical.
"""
from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DataError, FixationSet, ImageBuffer, resize_bilinear
from .io import atomic_write_bytes, write_fixations, write_ppm

DEFAULT_WIDTH = 128
DEFAULT_HEIGHT = 96

# role tags keep the per-image RNG streams disjoint
_STREAM_LAYOUT = 101
_STREAM_IMAGE = {"train": 202, "test": 303}
_STREAM_FIX = {"train": 404, "test": 505}


@dataclass(frozen=True)
class CorpusSpec:
    """Size and randomness knobs of one generated corpus."""

    train: int = 30
    test: int = 10
    families: int = 4
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    observers: int = 3
    fixations_per_observer: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.train < 1 or self.test < 0:
            raise DataError("corpus spec: need train >= 1 and test >= 0")
        if not (1 <= self.families <= self.train):
            raise DataError("corpus spec: families must be in [1, train]")
        if self.width < 32 or self.height < 32:
            raise DataError("corpus spec: images must be at least 32x32")
        if self.observers < 1 or self.fixations_per_observer < 1:
            raise DataError("corpus spec: need at least one fixation source")


def _family_layout(spec: CorpusSpec, family: int) -> dict:
    rng = np.random.default_rng([spec.seed, _STREAM_LAYOUT, family])
    count = int(rng.integers(1, 4))
    return {
        "family": family,
        "centers": rng.uniform(0.18, 0.82, size=(count, 2)).tolist(),
        "radii": rng.uniform(0.10, 0.20, size=count).tolist(),
        "amplitudes": rng.uniform(0.55, 0.95, size=count).tolist(),
        "hue": float(rng.uniform(0.0, 1.0)),
    }


def _render_image(spec: CorpusSpec, layout: dict, rng: np.random.Generator) -> tuple:
    """One scene image plus its jittered blob geometry (normalized coords)."""
    w, h = spec.width, spec.height
    base = rng.uniform(0.25, 0.45)
    coarse = rng.uniform(-1.0, 1.0, size=(6, 8))
    texture = resize_bilinear(coarse, w, h) * 0.08
    fine = rng.uniform(-1.0, 1.0, size=(h, w)) * 0.02
    gray = np.clip(base + texture + fine, 0.0, 1.0)
    img = np.repeat(gray[..., None], 3, axis=2)

    hue = (layout["hue"] + rng.uniform(-0.05, 0.05)) % 1.0
    color = np.asarray(colorsys.hsv_to_rgb(hue, 0.7, 0.95))
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    blobs = []
    for (cx, cy), radius, amp in zip(
        layout["centers"], layout["radii"], layout["amplitudes"]
    ):
        cx = float(np.clip(cx + rng.uniform(-0.04, 0.04), 0.05, 0.95))
        cy = float(np.clip(cy + rng.uniform(-0.04, 0.04), 0.05, 0.95))
        radius = float(radius * rng.uniform(0.9, 1.1))
        amp = float(amp * rng.uniform(0.85, 1.0))
        # normalized coords are isotropic in the short image dimension
        ar = w / h if w >= h else h / w
        dx = (xs - cx) * (ar if w >= h else 1.0)
        dy = (ys - cy) * (1.0 if w >= h else ar)
        alpha = amp * np.exp(
            -(dx[None, :] ** 2 + dy[:, None] ** 2) / (2.0 * radius * radius)
        )
        img = img * (1.0 - alpha[..., None]) + color * alpha[..., None]
        blobs.append({"cx": cx, "cy": cy, "radius": radius, "amplitude": amp})
    return ImageBuffer(np.clip(img, 0.0, 1.0)), blobs


def _plant_fixations(
    spec: CorpusSpec, image_id: str, blobs: list, rng: np.random.Generator
) -> FixationSet:
    w, h = spec.width, spec.height
    amps = np.asarray([b["amplitude"] for b in blobs])
    probs = amps / amps.sum()
    pts = []
    obs = []
    for o in range(spec.observers):
        for _ in range(spec.fixations_per_observer):
            b = blobs[int(rng.choice(len(blobs), p=probs))]
            cx = b["cx"] + rng.normal(0.0, b["radius"] * 0.35)
            cy = b["cy"] + rng.normal(0.0, b["radius"] * 0.35)
            x = int(np.clip(round(cx * w - 0.5), 0, w - 1))
            y = int(np.clip(round(cy * h - 0.5), 0, h - 1))
            pts.append((x, y))
            obs.append(f"s{o}")
    return FixationSet(image_id, np.asarray(pts, dtype=np.int64), tuple(obs))


def make_scene(spec: CorpusSpec, role: str, index: int):
    """Deterministically build one (image, fixations, metadata) triple."""
    if role not in _STREAM_IMAGE:
        raise DataError(f"unknown role {role!r}")
    family = index % spec.families
    layout = _family_layout(spec, family)
    image_id = f"{role}_{index:03d}"
    img_rng = np.random.default_rng([spec.seed, _STREAM_IMAGE[role], index])
    image, blobs = _render_image(spec, layout, img_rng)
    fix_rng = np.random.default_rng([spec.seed, _STREAM_FIX[role], index])
    fixations = _plant_fixations(spec, image_id, blobs, fix_rng)
    meta = {"image_id": image_id, "family": family, "blobs": blobs}
    return image, fixations, meta


def build_corpus(spec: CorpusSpec):
    """All scenes in memory: {role: (images, fixations, metas)}."""
    out = {}
    for role, count in (("train", spec.train), ("test", spec.test)):
        images: dict[str, ImageBuffer] = {}
        fixations: dict[str, FixationSet] = {}
        metas = []
        for index in range(count):
            image, fix, meta = make_scene(spec, role, index)
            images[meta["image_id"]] = image
            fixations[meta["image_id"]] = fix
            metas.append(meta)
        out[role] = (images, fixations, metas)
    return out


def generate_corpus(out_dir, spec: CorpusSpec = CorpusSpec()) -> dict:
    """Write train/ and test/ trees (PPM images + fixation CSV) + manifest."""
    out_dir = Path(out_dir)
    corpus = build_corpus(spec)
    manifest = {
        "spec": {
            "train": spec.train,
            "test": spec.test,
            "families": spec.families,
            "width": spec.width,
            "height": spec.height,
            "observers": spec.observers,
            "fixations_per_observer": spec.fixations_per_observer,
            "seed": spec.seed,
        },
        "roles": {},
    }
    for role, (images, fixations, metas) in corpus.items():
        image_dir = out_dir / role / "images"
        image_dir.mkdir(parents=True, exist_ok=True)
        for image_id in sorted(images):
            write_ppm(image_dir / f"{image_id}.ppm", images[image_id])
        write_fixations(out_dir / role / "fixations.csv", fixations)
        manifest["roles"][role] = metas
    atomic_write_bytes(
        out_dir / "manifest.json",
        (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode(),
    )
    return manifest
