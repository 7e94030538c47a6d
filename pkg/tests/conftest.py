"""Shared fixtures: small in-memory corpora and banks reused across files."""
import numpy as np
import pytest

from iseel.bank import BankConfig, CorpusItem, build_bank
from iseel.core import FixationSet, ImageBuffer
from iseel.synthetic import CorpusSpec, build_corpus


def checker_image(w=48, h=40, period=8, lo=0.2, hi=0.8):
    """Deterministic checkerboard RGB image, useful as a non-trivial scene."""
    ys, xs = np.mgrid[0:h, 0:w]
    cells = ((xs // period) + (ys // period)) % 2
    gray = np.where(cells == 0, lo, hi)
    rgb = np.stack([gray, gray * 0.9, gray * 0.8], axis=-1)
    return ImageBuffer(rgb)


def random_image(rng, w=48, h=40):
    return ImageBuffer(rng.uniform(0.0, 1.0, size=(h, w, 3)))


def random_fixations(rng, image_id, w, h, count=6):
    xy = np.stack(
        [rng.integers(0, w, size=count), rng.integers(0, h, size=count)], axis=1
    )
    return FixationSet(image_id, xy)


@pytest.fixture(scope="session")
def small_corpus():
    """8 train + 3 test blob scenes across 2 families."""
    return build_corpus(CorpusSpec(train=8, test=3, families=2, seed=5))


@pytest.fixture(scope="session")
def small_bank(small_corpus):
    """Bank trained on the 8 train scenes, with recorded residuals."""
    images, fixations, _ = small_corpus["train"]
    items = [
        CorpusItem(i, image=images[i], fixations=fixations[i]) for i in images
    ]
    residuals = {}
    bank = build_bank(items, BankConfig(seed=1), residuals=residuals)
    return bank, residuals
