"""Saliency prediction from a scene bank.

A query image is described, matched against the bank, and the retrieved
units vote: each unit's raw cell outputs pass through tanh, are rectified,
and summed. The pooled grid is max-normalized, sharpened by an attenuation
exponent, resized to the image, optionally multiplied by a center-bias
prior, blurred, and max-normalized again.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .bank import SceneBank, retrieve_top_n
from .core import (
    DataError,
    FixationSet,
    FormatError,
    Grid,
    ImageBuffer,
    MAX_ONE,
    SUMS_TO_ONE,
    as_grid,
    fixations_to_density,
    gaussian_smooth,
    normalize,
    resize_bilinear,
)
from .elm import predict as elm_predict
from .features import (
    CHANNELS_PER_SCALE,
    CLASSEMES_DIM,
    FeatureMap,
    SceneDescriptor,
    compute_gist,
    compute_standin_classemes,
    descriptor_stats,
    extract_standin_features,
    fold_weights,
)
from .io import atomic_write_bytes, _read_exact
from .metrics import (
    _rescale_points,
    cc as metric_cc,
    kl as metric_kl,
    nss as metric_nss,
    sauc as metric_sauc,
)

log = logging.getLogger(__name__)

PRIOR_MAGIC = b"ISEELPRI"
PRIOR_VERSION = 1
DEFAULT_PRIOR_STD = 0.08

DEFAULT_N = 697
DEFAULT_ALPHA = 6
DEFAULT_SIGMA_SMOOTH = 13.0


@dataclass(frozen=True)
class EnsembleConfig:
    """Prediction hyperparameters."""

    n: int = DEFAULT_N
    alpha: int = DEFAULT_ALPHA
    sigma_smooth: float = DEFAULT_SIGMA_SMOOTH
    use_prior: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise DataError("n must be >= 1")
        if self.alpha < 1:
            raise DataError("alpha must be >= 1")
        if not (self.sigma_smooth >= 0):
            raise DataError("sigma_smooth must be >= 0")


@dataclass(frozen=True)
class SpatialPrior:
    """Mixture of isotropic Gaussians in normalized image coordinates.

    ``kernels`` rows are (cx, cy, std, weight); renders are cached per
    output geometry.
    """

    kernels: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float32)
        if k.ndim != 2 or k.shape[1] != 4 or len(k) == 0:
            raise DataError("prior: expected non-empty (K, 4) kernels")
        if not np.isfinite(k).all():
            raise DataError("prior: non-finite kernel")
        if (k[:, 2] <= 0).any():
            raise DataError("prior: kernel std must be > 0")
        if (k[:, 3] < 0).any():
            raise DataError("prior: kernel weight must be >= 0")
        object.__setattr__(self, "kernels", k)

    def render(self, width: int, height: int) -> Grid:
        """Max-one mixture image at the given geometry (cached)."""
        key = (width, height)
        if key not in self._cache:
            xn = (np.arange(width, dtype=np.float64) + 0.5) / width
            yn = (np.arange(height, dtype=np.float64) + 0.5) / height
            acc = np.zeros((height, width))
            for cx, cy, std, weight in self.kernels.astype(np.float64):
                gx = np.exp(-((xn - cx) ** 2) / (2.0 * std * std))
                gy = np.exp(-((yn - cy) ** 2) / (2.0 * std * std))
                acc += weight * np.outer(gy, gx)
            self._cache[key] = normalize(acc, MAX_ONE).grid
        return self._cache[key]


def fit_prior(items, std: float = DEFAULT_PRIOR_STD) -> SpatialPrior:
    """One kernel per training fixation, equal weights.

    ``items`` yields (FixationSet, (width, height)) pairs; fixation pixels
    map to normalized centers at (x + 0.5) / width.
    """
    if not (std > 0):
        raise DataError("prior std must be > 0")
    rows = []
    for fix, (width, height) in items:
        fix.check_bounds(width, height)
        for x, y in fix.xy:
            rows.append(((x + 0.5) / width, (y + 0.5) / height, std, 1.0))
    if not rows:
        raise DataError("no fixations to fit the prior")
    kernels = np.asarray(rows, dtype=np.float32)
    kernels[:, 3] = 1.0 / len(rows)
    return SpatialPrior(kernels)


def save_prior(path, prior: SpatialPrior) -> None:
    blob = bytearray()
    blob += PRIOR_MAGIC
    blob += struct.pack("<II", PRIOR_VERSION, len(prior.kernels))
    blob += prior.kernels.astype("<f4").tobytes()
    atomic_write_bytes(path, bytes(blob))


def load_prior(path) -> SpatialPrior:
    with open(path, "rb") as fh:
        magic = fh.read(len(PRIOR_MAGIC))
        if magic != PRIOR_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "prior header"))
        if version != PRIOR_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if count == 0:
            raise FormatError(f"{path}: empty prior")
        kernels = np.frombuffer(
            _read_exact(fh, count * 16, "prior kernels"), dtype="<f4"
        ).reshape(count, 4)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes")
    return SpatialPrior(kernels.copy())


@dataclass(frozen=True)
class SaliencyMap:
    """Final map in [0, 1] plus a record of how it was produced."""

    grid: Grid
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        g = as_grid(self.grid, "saliency map")
        if g.min() < 0 or g.max() > 1:
            raise DataError("saliency map outside [0, 1]")
        object.__setattr__(self, "grid", g)


def aggregate(unit_outputs, alpha: int) -> Grid:
    """Rectified-tanh vote pooling, max-normalized and exponentiated.

    All-zero pooling (every unit everywhere non-positive) yields the zero
    grid rather than dividing by zero.
    """
    stack = np.asarray(unit_outputs, dtype=np.float64)
    if stack.ndim != 3 or len(stack) == 0:
        raise DataError("aggregate: expected non-empty (J, h, w) outputs")
    if not np.isfinite(stack).all():
        raise DataError("aggregate: non-finite unit output")
    if alpha < 1:
        raise DataError("alpha must be >= 1")
    s = np.maximum(np.tanh(stack), 0.0).sum(axis=0)
    m = s.max()
    if m == 0.0:
        return s
    return (s / m) ** alpha


def _query_features(image: ImageBuffer, bank: SceneBank) -> FeatureMap:
    dim = bank.feature_dim
    if dim % CHANNELS_PER_SCALE != 0:
        raise DataError(
            "bank was built from externally supplied features "
            f"(input dim {dim}); pass features explicitly"
        )
    return extract_standin_features(image, scales=dim // CHANNELS_PER_SCALE)


def _query_descriptor(image: ImageBuffer, bank: SceneBank) -> SceneDescriptor:
    return bank.transform_query(
        compute_standin_classemes(image), compute_gist(image)
    )


def predict_saliency(
    image: ImageBuffer,
    bank: SceneBank,
    config: EnsembleConfig,
    prior: SpatialPrior | None = None,
    features: FeatureMap | None = None,
    descriptor_blocks: tuple[np.ndarray, np.ndarray] | None = None,
) -> SaliencyMap:
    """Full pipeline: describe, retrieve, vote, upsample, bias, blur.

    ``descriptor_blocks`` (classemes, gist), when given, replaces the
    stand-in description; the bank's stored standardization is applied
    either way. A degenerate all-zero result falls back to the uniform map
    and is flagged in the provenance.
    """
    if config.use_prior and prior is None:
        raise DataError("config requests the prior but none was given")
    if features is None:
        features = _query_features(image, bank)
    if features.dim != bank.feature_dim:
        raise DataError(
            f"feature dim {features.dim} != bank feature dim {bank.feature_dim}"
        )
    if descriptor_blocks is None:
        query = _query_descriptor(image, bank)
    else:
        query = bank.transform_query(*descriptor_blocks)
    if config.n > len(bank.entries):
        log.warning(
            "requested n=%d exceeds bank size %d; using all entries",
            config.n,
            len(bank.entries),
        )
    entries = retrieve_top_n(bank, query, config.n)
    rows = features.as_rows()
    gh, gw = features.grid_h, features.grid_w
    outputs = [elm_predict(e.unit, rows).reshape(gh, gw) for e in entries]
    pooled = aggregate(outputs, config.alpha)

    height, width = image.data.shape[:2]
    sal = resize_bilinear(pooled, width, height)
    np.clip(sal, 0.0, None, out=sal)
    if config.use_prior:
        sal = sal * prior.render(width, height)
    sal = gaussian_smooth(sal, config.sigma_smooth)

    degenerate = sal.max() <= 0.0
    if degenerate:
        log.warning("degenerate prediction; falling back to the uniform map")
        sal = np.ones((height, width))
    else:
        sal = normalize(sal, MAX_ONE).grid
    provenance = {
        "n_requested": config.n,
        "n_used": len(entries),
        "alpha": config.alpha,
        "sigma_smooth": config.sigma_smooth,
        "use_prior": config.use_prior,
        "retrieved_ids": tuple(e.id for e in entries),
        "degenerate": degenerate,
    }
    return SaliencyMap(sal, provenance)


# --- hyperparameter search -------------------------------------------------


@dataclass(frozen=True)
class TuneResult:
    """Best configuration and the full (n, alpha, sigma, mean KL) table."""

    best: EnsembleConfig
    best_score: float
    table: tuple


def tune(
    images: dict[str, ImageBuffer],
    fixations: dict,
    bank: SceneBank,
    n_values,
    alpha_values,
    sigma_values,
    prior: SpatialPrior | None = None,
    use_prior: bool = True,
    sigma_gt: float | None = None,
) -> TuneResult:
    """Grid search minimizing mean KL on a validation set.

    Retrieval and unit outputs are computed once per image at the largest
    n; vote sums reuse the running prefix. Ties prefer smaller n, then
    smaller alpha, then smaller sigma.
    """
    from .core import default_sigma_gt

    n_values = sorted({int(n) for n in n_values})
    alpha_values = sorted({int(a) for a in alpha_values})
    sigma_values = sorted({float(s) for s in sigma_values})
    if not n_values or not alpha_values or not sigma_values:
        raise DataError("empty search grid")
    if n_values[0] < 1 or alpha_values[0] < 1 or sigma_values[0] < 0:
        raise DataError("search grid outside valid hyperparameter ranges")
    if use_prior and prior is None:
        raise DataError("use_prior requires a prior")
    ids = sorted(images)
    if not ids:
        raise DataError("no validation images")
    missing = [i for i in ids if i not in fixations]
    if missing:
        raise DataError(f"no fixations for: {missing}")

    n_max = min(max(n_values), len(bank.entries))
    prepared = []
    for image_id in ids:
        image = images[image_id]
        height, width = image.data.shape[:2]
        fix = fixations[image_id]
        fix.check_bounds(width, height)
        feats = _query_features(image, bank)
        entries = retrieve_top_n(bank, _query_descriptor(image, bank), n_max)
        rows = feats.as_rows()
        gh, gw = feats.grid_h, feats.grid_w
        votes = np.stack(
            [
                np.maximum(np.tanh(elm_predict(e.unit, rows)), 0.0).reshape(gh, gw)
                for e in entries
            ]
        )
        prefix = np.cumsum(votes, axis=0)
        sg = sigma_gt if sigma_gt is not None else default_sigma_gt(width, height)
        gt = fixations_to_density(fix, width, height, sg)
        prepared.append((prefix, (width, height), gt))

    best = None
    best_score = np.inf
    table = []
    for n, alpha, sigma in product(n_values, alpha_values, sigma_values):
        total = 0.0
        for prefix, (width, height), gt in prepared:
            s = prefix[min(n, len(prefix)) - 1]
            m = s.max()
            pooled = (s / m) ** alpha if m > 0 else s
            sal = resize_bilinear(pooled, width, height)
            np.clip(sal, 0.0, None, out=sal)
            if use_prior:
                sal = sal * prior.render(width, height)
            sal = gaussian_smooth(sal, sigma)
            if sal.max() <= 0.0:
                sal = np.ones((height, width))
            total += metric_kl(gt, normalize(sal, SUMS_TO_ONE))
        score = total / len(prepared)
        table.append((n, alpha, sigma, score))
        if score < best_score:
            best = EnsembleConfig(n, alpha, sigma, use_prior)
            best_score = score
    return TuneResult(best, float(best_score), tuple(table))


# --- inter-image similarity transfer ---------------------------------------


@dataclass(frozen=True)
class SimilarityReport:
    """Transfer scores when predicting from one partner image's fixations."""

    partners: dict
    per_image: dict
    mean_similar: dict
    mean_dissimilar: dict


def similarity_transfer_experiment(
    images: dict[str, ImageBuffer],
    fixations: dict,
    sigma_gt: float | None = None,
    splits: int = 100,
    seed: int = 0,
) -> SimilarityReport:
    """Score each image's fixations against its nearest and farthest scene.

    The partner's fixation density (rescaled into the target geometry)
    serves as the predicted map. Distances use descriptors standardized
    over this corpus; partner ties break by ascending id.
    """
    from .core import default_sigma_gt

    ids = sorted(images)
    if len(ids) < 2:
        raise DataError("need at least two images")
    missing = [i for i in ids if i not in fixations]
    if missing:
        raise DataError(f"no fixations for: {missing}")

    raw = {
        i: np.concatenate(
            [compute_standin_classemes(images[i]), compute_gist(images[i])]
        )
        for i in ids
    }
    mean, std = descriptor_stats(np.stack([raw[i] for i in ids]))
    scale = fold_weights(std, CLASSEMES_DIM, (1.0, 1.0))
    z = {i: (raw[i] - mean) / scale for i in ids}

    partners: dict[str, dict[str, str]] = {}
    per_image: dict[str, dict[str, float]] = {}
    for image_id in ids:
        others = [o for o in ids if o != image_id]
        dist = {o: float(np.linalg.norm(z[image_id] - z[o])) for o in others}
        similar = min(others, key=lambda o: (dist[o], o))
        dissimilar = max(others, key=lambda o: (dist[o], o))
        partners[image_id] = {"similar": similar, "dissimilar": dissimilar}

        image = images[image_id]
        height, width = image.data.shape[:2]
        fix = fixations[image_id]
        fix.check_bounds(width, height)
        sg = sigma_gt if sigma_gt is not None else default_sigma_gt(width, height)
        gt = fixations_to_density(fix, width, height, sg)
        pool = np.concatenate(
            [
                _rescale_points(
                    fixations[o].xy,
                    (images[o].width, images[o].height),
                    (width, height),
                )
                for o in others
            ]
        )
        scores: dict[str, float] = {}
        for kind, partner in (("similar", similar), ("dissimilar", dissimilar)):
            moved = _rescale_points(
                fixations[partner].xy,
                (images[partner].width, images[partner].height),
                (width, height),
            )
            pred = fixations_to_density(
                FixationSet(image_id, moved), width, height, sg
            )
            scores[f"sauc_{kind}"] = metric_sauc(
                pred.grid, fix.xy, pool, splits, seed
            )
            scores[f"cc_{kind}"] = metric_cc(gt.grid, pred.grid)
            scores[f"nss_{kind}"] = metric_nss(pred.grid, fix.xy)
        per_image[image_id] = scores

    def _mean(kind: str) -> dict:
        return {
            m: float(np.mean([per_image[i][f"{m}_{kind}"] for i in ids]))
            for m in ("sauc", "cc", "nss")
        }

    return SimilarityReport(
        partners, per_image, _mean("similar"), _mean("dissimilar")
    )
