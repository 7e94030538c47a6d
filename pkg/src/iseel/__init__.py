"""Inter-scene ensembles of extreme learners for fixation prediction."""

from .core import (
    DataError,
    DensityMap,
    FixationSet,
    FormatError,
    ImageBuffer,
    IseelError,
    NumericalError,
)
from .bank import BankConfig, CorpusItem, SceneBank, build_bank, load_bank, save_bank
from .predictor import (
    EnsembleConfig,
    SpatialPrior,
    fit_prior,
    load_prior,
    predict_saliency,
    save_prior,
)

__version__ = "0.1.0"

__all__ = [
    "BankConfig",
    "CorpusItem",
    "DataError",
    "DensityMap",
    "EnsembleConfig",
    "FixationSet",
    "FormatError",
    "ImageBuffer",
    "IseelError",
    "NumericalError",
    "SceneBank",
    "SpatialPrior",
    "build_bank",
    "fit_prior",
    "load_bank",
    "load_prior",
    "predict_saliency",
    "save_bank",
    "save_prior",
    "__version__",
]
