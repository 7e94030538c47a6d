"""Fixation metrics against hand-computed and closed-form oracles."""
import json
import math

import numpy as np
import pytest

from iseel.core import (
    DataError,
    DensityMap,
    FixationSet,
    MAX_ONE,
    SUMS_TO_ONE,
    fixations_to_density,
    normalize,
)
from iseel.metrics import (
    KL_EPSILON,
    MetricReport,
    _rescale_points,
    _roc_auc,
    auc_borji,
    auc_judd,
    cc,
    emd,
    evaluate_corpus,
    kl,
    nss,
    sauc,
    sim,
)
from iseel.synthetic import CorpusSpec, build_corpus


def _dist(cells, shape):
    g = np.zeros(shape)
    for (y, x), v in cells.items():
        g[y, x] = v
    return normalize(g, SUMS_TO_ONE)


class TestNss:
    def test_hand_computed_z_score(self):
        sal = np.array([[2.0, 1.0, 0.0]])
        got = nss(sal, np.array([[0, 0]]))
        assert got == pytest.approx(math.sqrt(1.5), abs=1e-12)

    def test_averages_over_fixations(self):
        sal = np.array([[2.0, 1.0, 0.0]])
        got = nss(sal, np.array([[0, 0], [2, 0]]))
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_zero_variance_map_scores_zero(self):
        assert nss(np.full((4, 4), 0.7), np.array([[1, 1]])) == 0.0

    def test_invariant_to_affine_rescaling(self):
        rng = np.random.default_rng(2)
        sal = rng.uniform(size=(10, 12))
        xy = np.array([[3, 4], [7, 1]])
        assert nss(sal * 5 + 2, xy) == pytest.approx(nss(sal, xy), rel=1e-12)

    def test_rejects_out_of_bounds(self):
        with pytest.raises(DataError, match="outside"):
            nss(np.ones((4, 4)), np.array([[4, 0]]))
        with pytest.raises(DataError):
            nss(np.ones((4, 4)), np.empty((0, 2)))


class TestRocAuc:
    def test_perfect_separation(self):
        assert _roc_auc(np.array([0.9, 0.8]), np.array([0.1, 0.2, 0.3])) == 1.0

    def test_reversed_separation_area(self):
        """K distinct positives all below the negatives: area = 1 / (2K)."""
        pos = np.linspace(0.01, 0.1, 10)
        neg = np.linspace(0.8, 0.9, 20)
        assert _roc_auc(pos, neg) == pytest.approx(1 / 20)

    def test_constant_scores_half(self):
        assert _roc_auc(np.full(4, 0.5), np.full(9, 0.5)) == pytest.approx(0.5)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        pos, neg = rng.uniform(size=8), rng.uniform(size=30)
        assert _roc_auc(pos, neg) == pytest.approx(_roc_auc(pos**3, neg**3), abs=1e-12)

    def test_empty_negatives_rejected(self):
        with pytest.raises(DataError, match="negative"):
            _roc_auc(np.array([0.5]), np.array([]))


class TestAucJudd:
    def test_fixations_on_top_values_score_one(self):
        sal = np.arange(25, dtype=float).reshape(5, 5) / 24
        xy = np.array([[4, 4], [3, 4], [2, 4]])  # the three largest cells
        assert auc_judd(sal, xy) == 1.0

    def test_constant_map_scores_half(self):
        assert auc_judd(np.full((5, 5), 0.3), np.array([[2, 2]])) == pytest.approx(0.5)

    def test_random_map_near_half(self):
        """Chance level, allowing the convention's mild optimism of about
        1 / (2 x fixation count) for finite positive sets."""
        rng = np.random.default_rng(5)
        scores = [
            auc_judd(
                rng.uniform(size=(20, 20)),
                np.stack([rng.integers(0, 20, 50), rng.integers(0, 20, 50)], axis=1),
            )
            for _ in range(40)
        ]
        assert abs(np.mean(scores) - 0.5) < 0.04


class TestAucBorji:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        sal = rng.uniform(size=(16, 16))
        xy = np.array([[2, 3], [10, 12]])
        assert auc_borji(sal, xy, splits=20, seed=1) == auc_borji(
            sal, xy, splits=20, seed=1
        )

    def test_discriminative_map_scores_high(self):
        sal = np.zeros((20, 20))
        sal[8:12, 8:12] = 1.0
        xy = np.array([[9, 9], [10, 10], [11, 9]])
        assert auc_borji(sal, xy, splits=50, seed=0) > 0.9

    def test_splits_validated(self):
        with pytest.raises(DataError):
            auc_borji(np.ones((4, 4)), np.array([[0, 0]]), splits=0)


class TestShuffledAuc:
    def test_constant_map_is_exactly_half(self):
        sal = np.full((10, 10), 0.4)
        xy = np.array([[1, 1], [2, 2]])
        pool = np.array([[5, 5], [6, 6], [7, 7]])
        assert sauc(sal, xy, pool, splits=100, seed=0) == pytest.approx(0.5)

    def test_center_bias_is_discounted(self):
        """A pure center-bias map stops looking good once negatives share
        the same center bias."""
        ys, xs = np.mgrid[0:21, 0:21]
        sal = np.exp(-((xs - 10) ** 2 + (ys - 10) ** 2) / 30.0)
        rng = np.random.default_rng(11)
        pts = np.clip(rng.normal(10, 2.0, size=(60, 2)), 0, 20).round().astype(int)
        fix, pool = pts[:20], pts[20:]
        centered = sauc(sal, fix, pool, splits=100, seed=0)
        uniform_pool = np.stack(
            [rng.integers(0, 21, 200), rng.integers(0, 21, 200)], axis=1
        )
        against_uniform = sauc(sal, fix, uniform_pool, splits=100, seed=0)
        assert centered < against_uniform
        assert abs(centered - 0.5) < 0.15

    def test_empty_pool_rejected(self):
        with pytest.raises(DataError, match="pool"):
            sauc(np.ones((4, 4)), np.array([[0, 0]]), np.empty((0, 2)))


class TestSim:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(13)
        p = normalize(rng.uniform(size=(6, 8)), SUMS_TO_ONE)
        assert sim(p, p) == pytest.approx(1.0, abs=1e-12)

    def test_hand_case(self):
        p = _dist({(0, 0): 0.7, (0, 1): 0.3}, (1, 2))
        q = _dist({(0, 0): 0.4, (0, 1): 0.6}, (1, 2))
        assert sim(p, q) == pytest.approx(0.7)

    def test_disjoint_supports_score_zero(self):
        p = _dist({(0, 0): 1.0}, (1, 2))
        q = _dist({(0, 1): 1.0}, (1, 2))
        assert sim(p, q) == 0.0

    def test_requires_matching_tags_and_shapes(self):
        p = _dist({(0, 0): 1.0}, (1, 2))
        with pytest.raises(DataError):
            sim(p, DensityMap(np.ones((1, 2)), MAX_ONE))
        with pytest.raises(DataError):
            sim(p, _dist({(0, 0): 1.0}, (2, 1)))


class TestCc:
    def test_self_correlation_is_one(self):
        rng = np.random.default_rng(17)
        a = rng.uniform(size=(5, 7))
        assert cc(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_anticorrelation(self):
        a = np.random.default_rng(19).uniform(size=(4, 4))
        assert cc(a, 1.0 - a) == pytest.approx(-1.0, abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(23)
        a, b = rng.uniform(size=(6, 6)), rng.uniform(size=(6, 6))
        assert cc(3 * a + 1, b) == pytest.approx(cc(a, b), rel=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(DataError, match="variance"):
            cc(np.full((3, 3), 0.5), np.ones((3, 3)))


class TestKl:
    def test_self_divergence_is_zero(self):
        rng = np.random.default_rng(29)
        p = normalize(rng.uniform(size=(6, 8)), SUMS_TO_ONE)
        assert kl(p, p) <= 1e-9

    def test_hand_case_with_epsilon(self):
        p = _dist({(0, 0): 1.0}, (1, 2))
        q = _dist({(0, 0): 0.5, (0, 1): 0.5}, (1, 2))
        eps = KL_EPSILON
        expected = 1.0 * math.log((1.0 + eps) / (0.5 + eps)) + 0.0
        assert kl(p, q) == pytest.approx(expected, rel=1e-12)

    def test_penalizes_missing_mass_heavily(self):
        p = _dist({(0, 0): 0.5, (0, 1): 0.5}, (1, 2))
        q = _dist({(0, 0): 1.0}, (1, 2))
        assert kl(p, q) > 10.0  # half the truth mass lands on ~epsilon

    def test_asymmetry(self):
        p = _dist({(0, 0): 1.0}, (1, 2))
        q = _dist({(0, 0): 0.5, (0, 1): 0.5}, (1, 2))
        assert kl(p, q) != kl(q, p)


class TestEmd:
    def test_identical_distributions_cost_nothing(self):
        rng = np.random.default_rng(31)
        p = normalize(rng.uniform(size=(8, 8)), SUMS_TO_ONE)
        assert emd(p, p) == pytest.approx(0.0, abs=1e-9)

    def test_corner_to_corner_diagonal(self):
        p = _dist({(0, 0): 1.0}, (3, 3))
        q = _dist({(2, 2): 1.0}, (3, 3))
        assert emd(p, q) == pytest.approx(2 * math.sqrt(2), abs=1e-6)

    def test_single_source_closed_form(self):
        """All mass from one cell: cost is the mass-weighted distance sum."""
        rng = np.random.default_rng(37)
        q_grid = rng.uniform(size=(5, 5))
        q = normalize(q_grid, SUMS_TO_ONE)
        p = _dist({(1, 2): 1.0}, (5, 5))
        expected = sum(
            q.grid[y, x] * math.hypot(y - 1, x - 2)
            for y in range(5)
            for x in range(5)
        )
        assert emd(p, q) == pytest.approx(expected, rel=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(41)
        p = normalize(rng.uniform(size=(6, 6)), SUMS_TO_ONE)
        q = normalize(rng.uniform(size=(6, 6)), SUMS_TO_ONE)
        assert emd(p, q) == pytest.approx(emd(q, p), abs=1e-9)

    def test_downsampling_rescales_distances(self):
        """A 32-cell hop at 64x64 is a ~16-cell hop after halving."""
        p = _dist({(16, 16): 1.0}, (64, 64))
        q = _dist({(16, 48): 1.0}, (64, 64))
        assert emd(p, q) == pytest.approx(16.0, abs=1.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataError):
            emd(_dist({(0, 0): 1.0}, (2, 2)), _dist({(0, 0): 1.0}, (3, 3)))


class TestRescalePoints:
    def test_identity_for_same_geometry(self):
        xy = np.array([[3, 4]])
        assert _rescale_points(xy, (10, 8), (10, 8)) is xy

    def test_pixel_center_mapping(self):
        xy = np.array([[0, 0], [9, 7]])
        out = _rescale_points(xy, (10, 8), (20, 16))
        assert out[0].tolist() == [0, 0]
        assert out[1].tolist() == [18, 14]
        back = _rescale_points(out, (20, 16), (10, 8))
        assert np.array_equal(back, xy)


@pytest.fixture(scope="module")
def ground_truth_setup():
    images, fixations, _ = build_corpus(
        CorpusSpec(train=3, test=0, families=1, seed=21)
    )["train"]
    maps = {
        i: fixations_to_density(
            fixations[i], images[i].width, images[i].height, 4.0
        ).grid
        for i in images
    }
    return maps, fixations


class TestEvaluateCorpus:
    def test_ground_truth_maps_score_perfectly(self, ground_truth_setup):
        maps, fixations = ground_truth_setup
        report = evaluate_corpus(
            maps,
            fixations,
            metric_names=("nss", "sauc", "sim", "cc", "kl"),
            sigma_gt=4.0,
            splits=10,
        )
        assert report.means["kl"] <= 1e-9
        assert report.means["sim"] == pytest.approx(1.0, abs=1e-9)
        assert report.means["cc"] == pytest.approx(1.0, abs=1e-9)
        assert report.means["nss"] > 0
        assert set(report.negative_counts) == set(maps)

    def test_emd_wiring(self, ground_truth_setup):
        maps, fixations = ground_truth_setup
        one = sorted(maps)[:1][0]
        report = evaluate_corpus(
            {one: maps[one]},
            fixations,
            metric_names=("emd",),
            sigma_gt=4.0,
            emd_max_side=16,
        )
        assert report.means["emd"] == pytest.approx(0.0, abs=1e-6)

    def test_unknown_metric_rejected(self, ground_truth_setup):
        maps, fixations = ground_truth_setup
        with pytest.raises(DataError, match="unknown metrics"):
            evaluate_corpus(maps, fixations, metric_names=("nss", "map"))

    def test_missing_fixations_rejected(self, ground_truth_setup):
        maps, _ = ground_truth_setup
        with pytest.raises(DataError, match="no fixations"):
            evaluate_corpus(maps, {}, metric_names=("nss",))

    def test_report_files(self, ground_truth_setup, tmp_path):
        maps, fixations = ground_truth_setup
        report = evaluate_corpus(
            maps, fixations, metric_names=("nss", "cc"), sigma_gt=4.0
        )
        report.to_csv(tmp_path / "r.csv")
        report.to_json(tmp_path / "r.json")
        lines = (tmp_path / "r.csv").read_text().strip().splitlines()
        assert lines[0] == "image_id,metric,score"
        assert len(lines) == 1 + 2 * len(maps)
        payload = json.loads((tmp_path / "r.json").read_text())
        assert payload["means"]["nss"] == pytest.approx(report.means["nss"])
        assert sorted(payload["per_image"]) == sorted(maps)


def test_metric_report_is_plain_data():
    report = MetricReport({"a": {"nss": 1.0}}, {"nss": 1.0}, 0, 10, {})
    assert report.per_image["a"]["nss"] == 1.0
