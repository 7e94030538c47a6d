"""Scene bank: one trained unit plus one scene descriptor per training image.

The bank owns the descriptor standardization statistics so query descriptors
are transformed exactly like the stored ones. Everything persisted is
float32; units are quantized to float32 at assembly time, which makes
save/load lossless (predictions from a loaded bank are bit-identical to the
bank that was saved).
"""
from __future__ import annotations

import hashlib
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import elm
from .core import DataError, FixationSet, FormatError, ImageBuffer, default_sigma_gt
from .core import fixations_to_density, sample_bilinear
from .features import (
    FeatureMap,
    SceneDescriptor,
    compute_gist,
    compute_standin_classemes,
    descriptor_stats,
    extract_standin_features,
    fold_weights,
)
from .io import atomic_write_bytes, _read_exact

log = logging.getLogger(__name__)

BANK_MAGIC = b"ISEELBNK"
BANK_VERSION = 1

_ACTIVATION_CODES = {"sigmoid": 0, "tanh": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


@dataclass(frozen=True)
class BankConfig:
    """Knobs shared by every unit in a bank."""

    hidden: int = 20
    seed: int = 0
    activation: str = "sigmoid"
    scales: int = 3
    stride: int = 8
    sigma_gt_fraction: float | None = None  # None: core default
    weights: tuple[float, float] = (1.0, 1.0)
    ridge: float = 0.0


@dataclass(frozen=True)
class CorpusItem:
    """One training image with whatever sources are available for it."""

    image_id: str
    image: ImageBuffer | None = None
    features: FeatureMap | None = None
    fixations: FixationSet | None = None
    classemes: np.ndarray | None = None
    gist: np.ndarray | None = None


@dataclass(frozen=True)
class BankEntry:
    id: str
    descriptor: SceneDescriptor
    unit: elm.ElmUnit


@dataclass(frozen=True)
class SceneBank:
    """Immutable collection of entries plus the descriptor transform.

    ``mean`` and ``scale`` (both float32) define the query transform
    combined = (raw - mean) / scale; weights and the zero-variance clamp are
    folded into scale. ``fingerprint`` carries in-memory build configuration
    for diagnostics; it is not persisted.
    """

    entries: tuple[BankEntry, ...]
    mean: np.ndarray
    scale: np.ndarray
    hidden: int
    activation: str
    fingerprint: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.entries:
            raise DataError("bank: at least one entry required")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("bank: duplicate entry ids")
        d = self.descriptor_dim
        k = self.feature_dim
        for e in self.entries:
            if e.descriptor.combined.size != d:
                raise DataError(f"bank: entry {e.id} descriptor dim != {d}")
            if e.unit.input_dim != k:
                raise DataError(f"bank: entry {e.id} feature dim != {k}")
            if e.unit.hidden != self.hidden or e.unit.activation != self.activation:
                raise DataError(f"bank: entry {e.id} unit config mismatch")
        if np.shape(self.mean) != (d,) or np.shape(self.scale) != (d,):
            raise DataError("bank: standardization stats dim mismatch")

    @property
    def descriptor_dim(self) -> int:
        return self.entries[0].descriptor.combined.size

    @property
    def feature_dim(self) -> int:
        return self.entries[0].unit.input_dim

    def __len__(self) -> int:
        return len(self.entries)

    def transform_query(self, classemes: np.ndarray, gist: np.ndarray) -> SceneDescriptor:
        """Standardize a query's raw blocks with this bank's statistics."""
        raw = np.concatenate(
            [np.asarray(classemes, dtype=np.float64), np.asarray(gist, dtype=np.float64)]
        )
        if raw.size != self.descriptor_dim:
            raise DataError(
                f"query descriptor dim {raw.size} != bank dim {self.descriptor_dim}"
            )
        combined = (raw - self.mean.astype(np.float64)) / self.scale.astype(np.float64)
        return SceneDescriptor(classemes, gist, combined)


def derive_unit_seed(global_seed: int, image_id: str) -> int:
    """Stable per-image seed independent of corpus order."""
    digest = hashlib.sha256(f"{global_seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _density_targets(fm: FeatureMap, fix: FixationSet, sigma_gt: float) -> np.ndarray:
    density = fixations_to_density(fix, fm.source_w, fm.source_h, sigma_gt)
    peak_one = density.grid / density.grid.max()
    xs, ys = fm.cell_centers()
    return sample_bilinear(peak_one, xs[None, :], ys[:, None]).ravel()


def _resolve_item(item: CorpusItem, config: BankConfig):
    if item.features is not None:
        fm = item.features
    elif item.image is not None:
        fm = extract_standin_features(item.image, config.scales, config.stride)
    else:
        raise DataError(f"{item.image_id}: neither image nor features available")
    if item.classemes is not None and item.gist is not None:
        classemes, gist = item.classemes, item.gist
    elif item.image is not None:
        classemes = compute_standin_classemes(item.image)
        gist = compute_gist(item.image)
    else:
        raise DataError(f"{item.image_id}: no descriptor source (image or sidecar)")
    return fm, np.asarray(classemes, dtype=np.float64), np.asarray(gist, dtype=np.float64)


def build_bank(
    corpus: list[CorpusItem],
    config: BankConfig = BankConfig(),
    jobs: int = 1,
    residuals: dict[str, tuple[float, float]] | None = None,
) -> SceneBank:
    """Train one unit per corpus image and assemble the bank.

    Images without fixations are skipped with a warning; if everything gets
    skipped the build fails. When ``residuals`` is a dict it is filled with
    image_id -> (unit RMS residual, best-constant-predictor RMS) for
    reporting.
    """
    items = sorted(corpus, key=lambda it: it.image_id)
    if len({it.image_id for it in items}) != len(items):
        raise DataError("corpus: duplicate image ids")
    usable = []
    for it in items:
        if it.fixations is None or len(it.fixations) == 0:
            log.warning("skipping %s: no fixations", it.image_id)
            continue
        usable.append(it)
    if not usable:
        raise DataError("no usable training images (all lack fixations)")

    def prepare(it: CorpusItem):
        fm, classemes, gist = _resolve_item(it, config)
        sigma_gt = (
            config.sigma_gt_fraction * max(fm.source_w, fm.source_h)
            if config.sigma_gt_fraction is not None
            else default_sigma_gt(fm.source_w, fm.source_h)
        )
        targets = _density_targets(fm, it.fixations, sigma_gt)
        ts = elm.TrainingSet(fm.as_rows(), targets)
        unit = elm.train(
            ts,
            config.hidden,
            derive_unit_seed(config.seed, it.image_id),
            config.activation,
            config.ridge,
        )
        if residuals is not None:
            baseline = float(np.sqrt(np.mean((ts.Y - ts.Y.mean()) ** 2)))
            residuals[it.image_id] = (elm.training_residual(unit, ts), baseline)
        return it.image_id, unit.quantized(), classemes, gist

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            prepared = list(pool.map(prepare, usable))
    else:
        prepared = [prepare(it) for it in usable]

    feature_dims = {unit.input_dim for _, unit, _, _ in prepared}
    if len(feature_dims) != 1:
        raise DataError(f"inconsistent feature dims across corpus: {sorted(feature_dims)}")
    classemes_lens = {c.size for _, _, c, _ in prepared}
    raw = np.stack([np.concatenate([c, g]) for _, _, c, g in prepared])
    if len(classemes_lens) != 1 or len({r.size for r in raw}) != 1:
        raise DataError("inconsistent descriptor dims across corpus")

    mean, std = descriptor_stats(raw)
    scale = fold_weights(std, next(iter(classemes_lens)), config.weights)
    mean32 = mean.astype(np.float32)
    scale32 = scale.astype(np.float32)

    entries = []
    for (image_id, unit, classemes, gist) in prepared:
        raw32 = np.concatenate([classemes, gist]).astype(np.float32)
        combined = (raw32.astype(np.float64) - mean32.astype(np.float64)) / scale32.astype(
            np.float64
        )
        desc = SceneDescriptor(
            raw32[: classemes.size].astype(np.float64),
            raw32[classemes.size :].astype(np.float64),
            combined,
        )
        entries.append(BankEntry(image_id, desc, unit))

    fingerprint = {
        "scales": config.scales,
        "stride": config.stride,
        "activation": config.activation,
        "hidden": config.hidden,
        "seed": config.seed,
        "weights": config.weights,
    }
    return SceneBank(
        tuple(entries), mean32, scale32, config.hidden, config.activation, fingerprint
    )


def descriptor_distance(a: SceneDescriptor, b: SceneDescriptor) -> float:
    """Euclidean distance between combined descriptor vectors."""
    if a.combined.size != b.combined.size:
        raise DataError(
            f"descriptor length mismatch: {a.combined.size} != {b.combined.size}"
        )
    return float(np.linalg.norm(a.combined - b.combined))


def retrieve_top_n(bank: SceneBank, query: SceneDescriptor, n: int) -> list[BankEntry]:
    """The n entries closest to the query, ascending distance, ties by id."""
    if n < 1:
        raise DataError("retrieve: n must be >= 1")
    ranked = sorted(
        bank.entries, key=lambda e: (descriptor_distance(e.descriptor, query), e.id)
    )
    return ranked[:n]


# --- ISEELBNK files --------------------------------------------------------


def save_bank(bank: SceneBank, path) -> None:
    d = bank.descriptor_dim
    k = bank.feature_dim
    L = bank.hidden
    out = bytearray()
    out += BANK_MAGIC
    out += struct.pack(
        "<IIIIBI",
        BANK_VERSION,
        d,
        k,
        L,
        _ACTIVATION_CODES[bank.activation],
        len(bank.entries),
    )
    out += bank.mean.astype("<f4").tobytes()
    out += bank.scale.astype("<f4").tobytes()
    for e in sorted(bank.entries, key=lambda e: e.id):
        ident = e.id.encode("utf-8")
        out += struct.pack("<H", len(ident)) + ident
        raw = np.concatenate([e.descriptor.classemes, e.descriptor.gist])
        out += raw.astype("<f4").tobytes()
        out += np.asarray(e.unit.omega).astype("<f4").tobytes()
        out += np.asarray(e.unit.bias).astype("<f4").tobytes()
        out += np.asarray(e.unit.gamma).astype("<f4").tobytes()
    atomic_write_bytes(path, bytes(out))


def _read_f32(fh, count: int, what: str) -> np.ndarray:
    raw = _read_exact(fh, 4 * count, what)
    return np.frombuffer(raw, dtype="<f4").copy()


def load_bank(path) -> SceneBank:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(BANK_MAGIC))
        if magic != BANK_MAGIC:
            raise FormatError(f"bad magic in {path}")
        header = _read_exact(fh, 21, "bank header")
        version, d, k, L, act_code, count = struct.unpack("<IIIIBI", header)
        if version != BANK_VERSION:
            raise FormatError(f"unsupported version {version} in {path}")
        if act_code not in _ACTIVATION_NAMES:
            raise FormatError(f"unknown activation code {act_code} in {path}")
        if count < 1:
            raise FormatError(f"empty bank in {path}")
        activation = _ACTIVATION_NAMES[act_code]
        mean = _read_f32(fh, d, "bank mean")
        scale = _read_f32(fh, d, "bank scale")
        entries = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, "entry id length"))
            ident = _read_exact(fh, id_len, "entry id").decode("utf-8")
            raw = _read_f32(fh, d, f"descriptor of {ident}")
            omega = _read_f32(fh, L * k, f"omega of {ident}").reshape(L, k)
            bias = _read_f32(fh, L, f"bias of {ident}")
            gamma = _read_f32(fh, L, f"gamma of {ident}")
            combined = (raw.astype(np.float64) - mean.astype(np.float64)) / scale.astype(
                np.float64
            )
            # Block split is not part of the format; the raw vector rides in
            # the unconstrained gist slot.
            desc = SceneDescriptor(
                np.empty(0, dtype=np.float64), raw.astype(np.float64), combined
            )
            entries.append(
                BankEntry(ident, desc, elm.ElmUnit(omega, bias, gamma, activation))
            )
        if fh.read(1):
            raise FormatError(f"trailing bytes in {path}")
    return SceneBank(tuple(entries), mean, scale, L, activation)
