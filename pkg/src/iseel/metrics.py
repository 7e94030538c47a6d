"""Fixation-prediction evaluation metrics.

Location-based: NSS, AUC-Judd, AUC-Borji, shuffled AUC. Distribution-based:
SIM, CC, KL, EMD. ROC areas use the MIT-style convention: thresholds at the
unique saliency values of the positive set, ties contributing 0.5 through
trapezoidal integration, which keeps every AUC invariant under strictly
monotonic rescaling of the map.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import (
    DataError,
    DensityMap,
    Grid,
    NumericalError,
    SUMS_TO_ONE,
    as_grid,
    fixations_to_density,
    normalize,
)
from .io import atomic_write_bytes

log = logging.getLogger(__name__)

KL_EPSILON = 2.2e-16
DEFAULT_SPLITS = 100
DEFAULT_EMD_MAX_SIDE = 32

METRIC_NAMES = ("nss", "auc_judd", "auc_borji", "sauc", "sim", "cc", "kl", "emd")


def _values_at(sal: Grid, xy: np.ndarray, what: str = "fixations") -> np.ndarray:
    sal = as_grid(sal, "saliency map")
    xy = np.asarray(xy, dtype=np.int64)
    if xy.ndim != 2 or xy.shape[1] != 2 or len(xy) == 0:
        raise DataError(f"{what}: expected non-empty (N, 2) points")
    h, w = sal.shape
    x, y = xy[:, 0], xy[:, 1]
    if (x < 0).any() or (x >= w).any() or (y < 0).any() or (y >= h).any():
        raise DataError(f"{what}: point outside {w}x{h} map")
    return sal[y, x]


def nss(sal: Grid, fix_xy: np.ndarray) -> float:
    """Mean z-scored saliency at fixation pixels (population std).

    A zero-variance map carries no signal and scores 0.
    """
    sal = as_grid(sal, "saliency map")
    pos = _values_at(sal, fix_xy)
    std = sal.std()
    if std == 0.0:
        log.debug("nss: zero-variance map, degenerate score 0")
        return 0.0
    return float(((pos - sal.mean()) / std).mean())


def _roc_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """Trapezoidal ROC area with thresholds at unique positive values."""
    if len(neg) == 0:
        raise DataError("empty negative pool")
    thresholds = np.unique(pos)[::-1]
    tp = np.concatenate([[0.0], [(pos >= t).mean() for t in thresholds], [1.0]])
    fp = np.concatenate([[0.0], [(neg >= t).mean() for t in thresholds], [1.0]])
    return float(np.trapezoid(tp, fp))


def auc_judd(sal: Grid, fix_xy: np.ndarray) -> float:
    """ROC area: positives at fixated pixels, negatives all other pixels."""
    sal = as_grid(sal, "saliency map")
    pos = _values_at(sal, fix_xy)
    h, w = sal.shape
    mask = np.zeros((h, w), dtype=bool)
    xy = np.asarray(fix_xy, dtype=np.int64)
    mask[xy[:, 1], xy[:, 0]] = True
    neg = sal[~mask]
    return _roc_auc(pos, neg)


def auc_borji(
    sal: Grid, fix_xy: np.ndarray, splits: int = DEFAULT_SPLITS, seed: int = 0
) -> float:
    """ROC area against uniformly random pixel negatives, averaged over splits."""
    sal = as_grid(sal, "saliency map")
    pos = _values_at(sal, fix_xy)
    if splits < 1:
        raise DataError("splits must be >= 1")
    flat = sal.ravel()
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(splits):
        neg = flat[rng.integers(0, flat.size, size=len(pos))]
        scores.append(_roc_auc(pos, neg))
    return float(np.mean(scores))


def sauc(
    sal: Grid,
    fix_xy: np.ndarray,
    other_xy: np.ndarray,
    splits: int = DEFAULT_SPLITS,
    seed: int = 0,
) -> float:
    """Shuffled AUC: negatives drawn from other images' fixation locations.

    Each split resamples the pool (with replacement) to the positive count;
    scores are averaged over splits.
    """
    sal = as_grid(sal, "saliency map")
    pos = _values_at(sal, fix_xy)
    other_xy = np.asarray(other_xy, dtype=np.int64)
    if other_xy.ndim != 2 or other_xy.shape[1] != 2 or len(other_xy) == 0:
        raise DataError("empty negative pool")
    if splits < 1:
        raise DataError("splits must be >= 1")
    pool = _values_at(sal, other_xy, "negative pool")
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(splits):
        neg = pool[rng.integers(0, len(pool), size=len(pos))]
        scores.append(_roc_auc(pos, neg))
    return float(np.mean(scores))


def _check_distribution_pair(p: DensityMap, q: DensityMap) -> None:
    if p.normalization != SUMS_TO_ONE or q.normalization != SUMS_TO_ONE:
        raise DataError("distribution metrics need sums-to-one maps")
    if p.shape != q.shape:
        raise DataError(f"shape mismatch: {p.shape} != {q.shape}")


def sim(p: DensityMap, q: DensityMap) -> float:
    """Histogram intersection: sum of cell-wise minima."""
    _check_distribution_pair(p, q)
    return float(np.minimum(p.grid, q.grid).sum())


def cc(a: Grid, b: Grid) -> float:
    """Pearson correlation over pixels."""
    a = as_grid(a, "map a")
    b = as_grid(b, "map b")
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} != {b.shape}")
    if a.std() == 0.0 or b.std() == 0.0:
        raise DataError("zero variance")
    return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])


def kl(p: DensityMap, q: DensityMap) -> float:
    """KL divergence of the model q from the ground truth p."""
    _check_distribution_pair(p, q)
    eps = KL_EPSILON
    return float(np.sum(p.grid * np.log((p.grid + eps) / (q.grid + eps))))


def _downsample_distribution(p: DensityMap, max_side: int) -> np.ndarray:
    from .core import resize_bilinear  # local to avoid a cycle at import time

    g = p.grid
    h, w = g.shape
    if max(h, w) > max_side:
        if w >= h:
            tw, th = max_side, max(1, round(h * max_side / w))
        else:
            th, tw = max_side, max(1, round(w * max_side / h))
        g = np.maximum(resize_bilinear(g, tw, th), 0.0)
    total = g.sum()
    if total <= 0:
        raise DataError("degenerate map")
    return g / total


def _solve_transport(p: np.ndarray, q: np.ndarray, cost: np.ndarray) -> float:
    """Exact transportation LP: min <cost, flow> with row/col sum constraints."""
    ns, nt = len(p), len(q)
    n = ns * nt
    idx = np.arange(n)
    a_src = sparse.csr_matrix(
        (np.ones(n), (idx // nt, idx)), shape=(ns, n)
    )
    a_dst = sparse.csr_matrix(
        (np.ones(n), (idx % nt, idx)), shape=(nt, n)
    )
    res = linprog(
        cost.ravel(),
        A_eq=sparse.vstack([a_src, a_dst]),
        b_eq=np.concatenate([p, q]),
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise NumericalError(f"transport LP failed: {res.message}")
    return float(res.fun)


def emd(p: DensityMap, q: DensityMap, max_side: int = DEFAULT_EMD_MAX_SIDE) -> float:
    """Earth mover's distance with Euclidean ground distance in cell units.

    Both maps are downsampled (aspect-preserving) so the longer side is at
    most ``max_side``, renormalized, and the optimal-transport cost between
    the positive-mass cells is solved exactly.
    """
    _check_distribution_pair(p, q)
    pg = _downsample_distribution(p, max_side)
    qg = _downsample_distribution(q, max_side)
    h, w = pg.shape
    ys, xs = np.divmod(np.arange(h * w), w)
    pf, qf = pg.ravel(), qg.ravel()
    si = np.flatnonzero(pf > 0)
    ti = np.flatnonzero(qf > 0)
    cost = np.hypot(
        ys[si][:, None] - ys[ti][None, :], xs[si][:, None] - xs[ti][None, :]
    )
    return _solve_transport(pf[si], qf[ti], cost)


# --- corpus evaluation -----------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    """Per-image scores, corpus means, and the sampling bookkeeping."""

    per_image: dict
    means: dict
    shuffle_seed: int
    splits: int
    negative_counts: dict

    def to_csv(self, path) -> None:
        lines = ["image_id,metric,score\n"]
        for image_id in sorted(self.per_image):
            for metric in sorted(self.per_image[image_id]):
                score = self.per_image[image_id][metric]
                lines.append(f"{image_id},{metric},{score:.10g}\n")
        atomic_write_bytes(path, "".join(lines).encode())

    def to_json(self, path) -> None:
        payload = {
            "means": {k: self.means[k] for k in sorted(self.means)},
            "per_image": {
                i: dict(sorted(self.per_image[i].items()))
                for i in sorted(self.per_image)
            },
            "shuffle_seed": self.shuffle_seed,
            "splits": self.splits,
            "negative_counts": dict(sorted(self.negative_counts.items())),
        }
        atomic_write_bytes(path, (json.dumps(payload, indent=2) + "\n").encode())


def _rescale_points(xy: np.ndarray, src_wh, dst_wh) -> np.ndarray:
    """Move fixation points between image geometries (pixel-center aware)."""
    sw, sh = src_wh
    dw, dh = dst_wh
    if (sw, sh) == (dw, dh):
        return xy
    out = np.empty_like(xy)
    out[:, 0] = np.clip(np.round((xy[:, 0] + 0.5) * dw / sw - 0.5), 0, dw - 1)
    out[:, 1] = np.clip(np.round((xy[:, 1] + 0.5) * dh / sh - 0.5), 0, dh - 1)
    return out


def evaluate_corpus(
    maps: dict[str, Grid],
    fixations: dict,
    metric_names=("nss", "auc_judd", "auc_borji", "sauc", "sim", "cc", "kl"),
    sigma_gt: float | None = None,
    splits: int = DEFAULT_SPLITS,
    seed: int = 0,
    emd_max_side: int = DEFAULT_EMD_MAX_SIDE,
) -> MetricReport:
    """Score every map against its fixation set; mean over the corpus.

    ``sigma_gt`` (pixels) controls the ground-truth density bandwidth for
    the distribution metrics; None picks the per-image default.
    """
    from .core import default_sigma_gt

    unknown = set(metric_names) - set(METRIC_NAMES)
    if unknown:
        raise DataError(f"unknown metrics: {sorted(unknown)}")
    ids = sorted(maps)
    if not ids:
        raise DataError("no maps to evaluate")
    missing = [i for i in ids if i not in fixations]
    if missing:
        raise DataError(f"no fixations for: {missing}")

    per_image: dict[str, dict[str, float]] = {}
    negative_counts: dict[str, int] = {}
    for image_id in ids:
        sal = as_grid(maps[image_id], f"map {image_id}")
        h, w = sal.shape
        fix = fixations[image_id]
        fix.check_bounds(w, h)
        scores: dict[str, float] = {}
        need_density = any(m in metric_names for m in ("sim", "cc", "kl", "emd"))
        if need_density:
            sg = sigma_gt if sigma_gt is not None else default_sigma_gt(w, h)
            gt = fixations_to_density(fix, w, h, sg)
            model = normalize(sal, SUMS_TO_ONE)
        if "nss" in metric_names:
            scores["nss"] = nss(sal, fix.xy)
        if "auc_judd" in metric_names:
            scores["auc_judd"] = auc_judd(sal, fix.xy)
        if "auc_borji" in metric_names:
            scores["auc_borji"] = auc_borji(sal, fix.xy, splits, seed)
        if "sauc" in metric_names:
            pool = []
            for other_id in ids:
                if other_id == image_id:
                    continue
                other = fixations[other_id]
                oh, ow = as_grid(maps[other_id]).shape
                pool.append(_rescale_points(other.xy, (ow, oh), (w, h)))
            if not pool:
                raise DataError("sauc needs at least two images")
            pool_xy = np.concatenate(pool)
            negative_counts[image_id] = len(pool_xy)
            scores["sauc"] = sauc(sal, fix.xy, pool_xy, splits, seed)
        if "sim" in metric_names:
            scores["sim"] = sim(gt, model)
        if "cc" in metric_names:
            scores["cc"] = cc(gt.grid, sal)
        if "kl" in metric_names:
            scores["kl"] = kl(gt, model)
        if "emd" in metric_names:
            scores["emd"] = emd(gt, model, emd_max_side)
        per_image[image_id] = scores

    means = {
        m: float(np.mean([per_image[i][m] for i in ids]))
        for m in metric_names
        if all(m in per_image[i] for i in ids)
    }
    return MetricReport(per_image, means, seed, splits, negative_counts)
