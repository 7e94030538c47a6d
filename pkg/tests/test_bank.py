"""Bank assembly, retrieval, and the bank file format."""
import logging

import numpy as np
import pytest

from iseel.bank import (
    BankConfig,
    BankEntry,
    CorpusItem,
    SceneBank,
    build_bank,
    derive_unit_seed,
    descriptor_distance,
    load_bank,
    retrieve_top_n,
    save_bank,
)
from iseel.core import DataError, FixationSet, FormatError
from iseel.elm import ElmUnit, predict
from iseel.features import SceneDescriptor
from iseel.synthetic import CorpusSpec, build_corpus

from conftest import random_fixations, random_image


def _items(images, fixations):
    return [CorpusItem(i, image=images[i], fixations=fixations[i]) for i in images]


class TestDeriveUnitSeed:
    def test_stable_and_distinct(self):
        assert derive_unit_seed(0, "img_a") == derive_unit_seed(0, "img_a")
        seen = {derive_unit_seed(0, f"img_{i}") for i in range(50)}
        assert len(seen) == 50
        assert derive_unit_seed(1, "img_a") != derive_unit_seed(0, "img_a")


class TestBuildBank:
    def test_single_image_corpus(self):
        rng = np.random.default_rng(0)
        img = random_image(rng)
        fix = random_fixations(rng, "only", img.width, img.height)
        bank = build_bank([CorpusItem("only", image=img, fixations=fix)])
        assert len(bank) == 1
        assert bank.entries[0].id == "only"

    def test_entries_sorted_and_residuals_beat_constant(self, small_bank):
        bank, residuals = small_bank
        ids = [e.id for e in bank.entries]
        assert ids == sorted(ids)
        assert set(residuals) == set(ids)
        for image_id, (rms, baseline) in residuals.items():
            assert rms < baseline, image_id

    def test_twenty_units_beat_constant_baseline(self):
        """Each per-image unit explains more than the best constant does."""
        images, fixations, _ = build_corpus(
            CorpusSpec(train=20, test=0, families=4, seed=13)
        )["train"]
        residuals = {}
        bank = build_bank(_items(images, fixations), residuals=residuals)
        assert len(bank) == 20
        assert all(rms < base for rms, base in residuals.values())

    def test_skips_fixationless_images(self, caplog):
        rng = np.random.default_rng(2)
        img_a, img_b = random_image(rng), random_image(rng)
        fix = random_fixations(rng, "a", img_a.width, img_a.height)
        items = [
            CorpusItem("a", image=img_a, fixations=fix),
            CorpusItem("b", image=img_b),
        ]
        with caplog.at_level(logging.WARNING):
            bank = build_bank(items)
        assert len(bank) == 1
        assert any("skipping b" in r.message for r in caplog.records)

    def test_all_skipped_is_an_error(self):
        rng = np.random.default_rng(3)
        with pytest.raises(DataError, match="no usable"):
            build_bank([CorpusItem("a", image=random_image(rng))])

    def test_duplicate_ids_rejected(self):
        rng = np.random.default_rng(4)
        img = random_image(rng)
        fix = random_fixations(rng, "a", img.width, img.height)
        with pytest.raises(DataError, match="duplicate"):
            build_bank(
                [
                    CorpusItem("a", image=img, fixations=fix),
                    CorpusItem("a", image=img, fixations=fix),
                ]
            )

    def test_corpus_order_does_not_matter(self, tmp_path, small_corpus):
        images, fixations, _ = small_corpus["train"]
        items = _items(images, fixations)
        bank_fwd = build_bank(items, BankConfig(seed=1))
        bank_rev = build_bank(items[::-1], BankConfig(seed=1))
        save_bank(bank_fwd, tmp_path / "fwd.bnk")
        save_bank(bank_rev, tmp_path / "rev.bnk")
        assert (tmp_path / "fwd.bnk").read_bytes() == (tmp_path / "rev.bnk").read_bytes()

    def test_parallel_build_matches_serial(self, tmp_path, small_corpus):
        images, fixations, _ = small_corpus["train"]
        items = _items(images, fixations)
        serial = build_bank(items, BankConfig(seed=1), jobs=1)
        parallel = build_bank(items, BankConfig(seed=1), jobs=4)
        save_bank(serial, tmp_path / "s.bnk")
        save_bank(parallel, tmp_path / "p.bnk")
        assert (tmp_path / "s.bnk").read_bytes() == (tmp_path / "p.bnk").read_bytes()

    def test_image_free_item_needs_sidecars(self):
        with pytest.raises(DataError, match="neither image nor features"):
            build_bank([CorpusItem("a", fixations=FixationSet("a", [[0, 0]]))])


def _desc(vec):
    v = np.asarray(vec, dtype=np.float64)
    return SceneDescriptor(np.empty(0), v, v)


class TestRetrieval:
    def test_distance_is_euclidean(self):
        a = _desc([0.0, 3.0])
        b = _desc([4.0, 0.0])
        assert descriptor_distance(a, b) == pytest.approx(5.0)
        with pytest.raises(DataError, match="mismatch"):
            descriptor_distance(a, _desc([1.0, 2.0, 3.0]))

    def test_self_retrieval_at_zero_distance(self, small_bank):
        bank, _ = small_bank
        target = bank.entries[3]
        got = retrieve_top_n(bank, target.descriptor, 1)
        assert got[0].id == target.id

    def test_ordering_and_tie_break(self):
        unit = ElmUnit(np.zeros((2, 3)), np.zeros(2), np.zeros(2), "sigmoid")
        entries = (
            BankEntry("c", _desc([1.0, 0.0]), unit),
            BankEntry("a", _desc([2.0, 0.0]), unit),
            BankEntry("b", _desc([1.0, 0.0]), unit),
        )
        bank = SceneBank(entries, np.zeros(2, np.float32), np.ones(2, np.float32), 2, "sigmoid")
        got = retrieve_top_n(bank, _desc([0.0, 0.0]), 3)
        assert [e.id for e in got] == ["b", "c", "a"]

    def test_n_truncates_and_validates(self, small_bank):
        bank, _ = small_bank
        q = bank.entries[0].descriptor
        assert len(retrieve_top_n(bank, q, 3)) == 3
        assert len(retrieve_top_n(bank, q, 100)) == len(bank)
        with pytest.raises(DataError):
            retrieve_top_n(bank, q, 0)


class TestSceneBankInvariants:
    def test_duplicate_entry_ids_rejected(self):
        unit = ElmUnit(np.zeros((2, 3)), np.zeros(2), np.zeros(2), "sigmoid")
        entries = (
            BankEntry("a", _desc([0.0]), unit),
            BankEntry("a", _desc([1.0]), unit),
        )
        with pytest.raises(DataError, match="duplicate"):
            SceneBank(entries, np.zeros(1, np.float32), np.ones(1, np.float32), 2, "sigmoid")

    def test_config_mismatch_rejected(self):
        u2 = ElmUnit(np.zeros((2, 3)), np.zeros(2), np.zeros(2), "sigmoid")
        u3 = ElmUnit(np.zeros((3, 3)), np.zeros(3), np.zeros(3), "sigmoid")
        entries = (BankEntry("a", _desc([0.0]), u2), BankEntry("b", _desc([1.0]), u3))
        with pytest.raises(DataError, match="config mismatch"):
            SceneBank(entries, np.zeros(1, np.float32), np.ones(1, np.float32), 2, "sigmoid")

    def test_transform_query_standardizes(self, small_bank):
        bank, _ = small_bank
        entry = bank.entries[0]
        q = bank.transform_query(entry.descriptor.classemes, entry.descriptor.gist)
        assert np.allclose(q.combined, entry.descriptor.combined, atol=1e-6)
        with pytest.raises(DataError, match="dim"):
            bank.transform_query(np.zeros(3), np.zeros(3))


class TestBankFile:
    def test_roundtrip_preserves_everything(self, tmp_path, small_bank):
        bank, _ = small_bank
        path = tmp_path / "bank.bnk"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert len(loaded) == len(bank)
        assert loaded.hidden == bank.hidden
        assert loaded.activation == bank.activation
        assert np.array_equal(loaded.mean, bank.mean)
        assert np.array_equal(loaded.scale, bank.scale)
        for got, want in zip(loaded.entries, bank.entries):
            assert got.id == want.id
            assert np.array_equal(
                np.concatenate([want.descriptor.classemes, want.descriptor.gist]).astype(
                    np.float32
                ),
                got.descriptor.gist.astype(np.float32),
            )
            assert np.array_equal(np.asarray(got.unit.omega), np.asarray(want.unit.omega))
            assert np.array_equal(np.asarray(got.unit.gamma), np.asarray(want.unit.gamma))

    def test_loaded_units_predict_identically(self, tmp_path, small_bank):
        """Float32 storage makes persistence lossless for predictions."""
        bank, _ = small_bank
        path = tmp_path / "bank.bnk"
        save_bank(bank, path)
        loaded = load_bank(path)
        rng = np.random.default_rng(6)
        X = rng.uniform(size=(40, bank.feature_dim))
        for got, want in zip(loaded.entries, bank.entries):
            assert np.array_equal(predict(got.unit, X), predict(want.unit, X))

    def test_save_is_deterministic(self, tmp_path, small_bank):
        bank, _ = small_bank
        save_bank(bank, tmp_path / "a.bnk")
        save_bank(bank, tmp_path / "b.bnk")
        assert (tmp_path / "a.bnk").read_bytes() == (tmp_path / "b.bnk").read_bytes()

    def test_rejects_corruption(self, tmp_path, small_bank):
        bank, _ = small_bank
        path = tmp_path / "bank.bnk"
        save_bank(bank, path)
        blob = path.read_bytes()
        (tmp_path / "m.bnk").write_bytes(b"WRONG!!!" + blob[8:])
        with pytest.raises(FormatError, match="magic"):
            load_bank(tmp_path / "m.bnk")
        (tmp_path / "v.bnk").write_bytes(blob[:8] + b"\x63" + blob[9:])
        with pytest.raises(FormatError, match="version"):
            load_bank(tmp_path / "v.bnk")
        (tmp_path / "t.bnk").write_bytes(blob[:-1])
        with pytest.raises(FormatError, match="length mismatch"):
            load_bank(tmp_path / "t.bnk")
        (tmp_path / "x.bnk").write_bytes(blob + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_bank(tmp_path / "x.bnk")
