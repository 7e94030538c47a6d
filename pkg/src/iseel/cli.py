"""Command-line surface.

Subcommands: build-bank, predict, fit-prior, evaluate, tune,
similarity-experiment, gen-synthetic. Exit codes: 0 success, 1 usage
error, 2 data/format error, 3 numerical failure. Verbosity comes from the
ISEEL_LOG environment variable (DEBUG, INFO, WARNING, ERROR).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bank as bank_mod
from . import metrics as metrics_mod
from . import predictor as pred_mod
from . import synthetic as synth_mod
from .core import DataError, FormatError, ImageBuffer, IseelError, NumericalError
from .features import ingest_features, read_descriptor_blocks
from .io import list_images, read_fixations, read_image, read_map, write_map, write_pgm

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped onto this tool's exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    name = os.environ.get("ISEEL_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _load_images(directory) -> dict[str, ImageBuffer]:
    paths = list_images(directory)
    if not paths:
        raise DataError(f"no images found in {directory}")
    return {p.stem: read_image(p) for p in paths}


def _load_fixations(path, images: dict[str, ImageBuffer] | None):
    sizes = (
        {i: (img.width, img.height) for i, img in images.items()}
        if images is not None
        else None
    )
    return read_fixations(path, sizes)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints: {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {text!r}")


def _metric_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _use_prior(args) -> bool:
    return args.prior is not None and not args.no_prior


def _load_prior_if_used(args):
    if _use_prior(args):
        return pred_mod.load_prior(args.prior), True
    log.info("running without the spatial prior")
    return None, False


def _ensemble_config(args, used_prior: bool) -> pred_mod.EnsembleConfig:
    return pred_mod.EnsembleConfig(
        n=args.n, alpha=args.alpha, sigma_smooth=args.sigma, use_prior=used_prior
    )


def _sidecar_features(directory, image_id: str):
    """ISEELFEAT + ISEELDESC pair for one image id, both required."""
    feat = Path(directory) / f"{image_id}.feat"
    desc = Path(directory) / f"{image_id}.desc"
    for p in (feat, desc):
        if not p.exists():
            raise DataError(f"missing feature sidecar {p}")
    classemes, gist = read_descriptor_blocks(desc)
    return ingest_features(feat), classemes, gist


# --- commands --------------------------------------------------------------


def cmd_build_bank(args) -> int:
    images = _load_images(args.images)
    fixations = _load_fixations(args.fixations, images)
    corpus = []
    for image_id in sorted(images):
        features = classemes = gist = None
        if args.features is not None:
            features, classemes, gist = _sidecar_features(args.features, image_id)
        corpus.append(
            bank_mod.CorpusItem(
                image_id,
                image=images[image_id],
                features=features,
                fixations=fixations.get(image_id),
                classemes=classemes,
                gist=gist,
            )
        )
    config = bank_mod.BankConfig(
        hidden=args.hidden,
        seed=args.seed,
        activation=args.activation,
        scales=args.scales,
    )
    residuals: dict = {}
    built = bank_mod.build_bank(corpus, config, jobs=args.jobs, residuals=residuals)
    bank_mod.save_bank(built, args.out)
    unit_rms = float(np.mean([r for r, _ in residuals.values()]))
    base_rms = float(np.mean([b for _, b in residuals.values()]))
    print(f"bank: {args.out}")
    print(f"entries: {len(built)}")
    print(f"feature dim: {built.feature_dim}  descriptor dim: {built.descriptor_dim}")
    print(f"mean training rms: {unit_rms:.6f} (constant-predictor {base_rms:.6f})")
    return EXIT_OK


def cmd_fit_prior(args) -> int:
    images = _load_images(args.images)
    fixations = _load_fixations(args.fixations, images)
    items = [
        (fixations[i], (images[i].width, images[i].height))
        for i in sorted(fixations)
        if i in images
    ]
    if not items:
        raise DataError("no fixations match the image directory")
    prior = pred_mod.fit_prior(items, std=args.std)
    pred_mod.save_prior(args.out, prior)
    print(f"prior: {args.out}")
    print(f"kernels: {len(prior.kernels)}")
    return EXIT_OK


def cmd_predict(args) -> int:
    in_path = Path(args.images)
    single = in_path.is_file()
    paths = [in_path] if single else list_images(in_path)
    if not paths:
        raise DataError(f"no images found in {in_path}")
    loaded_bank = bank_mod.load_bank(args.bank)
    prior, used_prior = _load_prior_if_used(args)
    config = _ensemble_config(args, used_prior)

    out = Path(args.out)
    if single:
        out.parent.mkdir(parents=True, exist_ok=True)
    else:
        out.mkdir(parents=True, exist_ok=True)

    def one(path: Path):
        image = read_image(path)
        features = classemes = gist = None
        if args.features is not None:
            features, classemes, gist = _sidecar_features(args.features, path.stem)
        blocks = (classemes, gist) if classemes is not None else None
        sal = pred_mod.predict_saliency(
            image, loaded_bank, config, prior, features, blocks
        )
        target = out if single else out / f"{path.stem}.map"
        write_map(target, sal.grid)
        if args.pgm:
            write_pgm(target.with_suffix(".pgm"), sal.grid)
        return target

    failures: list[tuple[Path, Exception]] = []
    if args.jobs > 1:
        def guarded(path: Path):
            try:
                return one(path)
            except IseelError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for path, result in zip(paths, pool.map(guarded, paths)):
                if isinstance(result, Exception):
                    failures.append((path, result))
                else:
                    print(f"{path.name} -> {result}")
    else:
        for path in paths:
            try:
                print(f"{path.name} -> {one(path)}")
            except IseelError as exc:
                failures.append((path, exc))
    for path, exc in failures:
        print(f"error: {path}: {exc}", file=sys.stderr)
    if failures:
        if any(isinstance(e, NumericalError) for _, e in failures):
            return EXIT_NUMERICAL
        return EXIT_DATA
    return EXIT_OK


def _maps_for_evaluation(args) -> dict:
    if (args.maps is None) == (args.bank is None):
        raise DataError("evaluate needs exactly one of --maps or --bank")
    if args.maps is not None:
        paths = sorted(Path(args.maps).glob("*.map"))
        if not paths:
            raise DataError(f"no .map files in {args.maps}")
        return {p.stem: read_map(p) for p in paths}
    images = _load_images(args.images)
    loaded_bank = bank_mod.load_bank(args.bank)
    prior, used_prior = _load_prior_if_used(args)
    config = _ensemble_config(args, used_prior)
    return {
        i: pred_mod.predict_saliency(images[i], loaded_bank, config, prior).grid
        for i in sorted(images)
    }


def cmd_evaluate(args) -> int:
    maps = _maps_for_evaluation(args)
    fixations = read_fixations(args.fixations)
    fixations = {i: fixations[i] for i in maps if i in fixations}
    report = metrics_mod.evaluate_corpus(
        maps,
        fixations,
        metric_names=tuple(args.metrics),
        sigma_gt=args.sigma_gt,
        splits=args.splits,
        seed=args.seed,
    )
    print(f"images: {len(report.per_image)}")
    for name in args.metrics:
        print(f"{name}: {report.means[name]:.6f}")
    if args.out is not None:
        report.to_csv(args.out)
        report.to_json(Path(args.out).with_suffix(".json"))
        print(f"report: {args.out}")
    return EXIT_OK


def cmd_tune(args) -> int:
    images = _load_images(args.images)
    fixations = _load_fixations(args.fixations, images)
    loaded_bank = bank_mod.load_bank(args.bank)
    prior, used_prior = _load_prior_if_used(args)
    result = pred_mod.tune(
        images,
        fixations,
        loaded_bank,
        args.n,
        args.alpha,
        args.sigma,
        prior=prior,
        use_prior=used_prior,
        sigma_gt=args.sigma_gt,
    )
    best = result.best
    print(
        f"best: n={best.n} alpha={best.alpha} sigma={best.sigma_smooth:g} "
        f"(mean kl {result.best_score:.6f})"
    )
    if args.out is not None:
        payload = {
            "best": {
                "n": best.n,
                "alpha": best.alpha,
                "sigma": best.sigma_smooth,
                "use_prior": best.use_prior,
            },
            "best_mean_kl": result.best_score,
            "table": [
                {"n": n, "alpha": a, "sigma": s, "mean_kl": k}
                for n, a, s, k in result.table
            ],
        }
        from .io import atomic_write_bytes

        atomic_write_bytes(args.out, (json.dumps(payload, indent=2) + "\n").encode())
        print(f"report: {args.out}")
    return EXIT_OK


def cmd_similarity_experiment(args) -> int:
    images = _load_images(args.images)
    fixations = _load_fixations(args.fixations, images)
    report = pred_mod.similarity_transfer_experiment(
        images,
        fixations,
        sigma_gt=args.sigma_gt,
        splits=args.splits,
        seed=args.seed,
    )
    for kind, means in (
        ("similar", report.mean_similar),
        ("dissimilar", report.mean_dissimilar),
    ):
        print(
            f"{kind}: sauc={means['sauc']:.4f} cc={means['cc']:.4f} "
            f"nss={means['nss']:.4f}"
        )
    if args.out is not None:
        payload = {
            "partners": report.partners,
            "per_image": report.per_image,
            "mean_similar": report.mean_similar,
            "mean_dissimilar": report.mean_dissimilar,
        }
        from .io import atomic_write_bytes

        atomic_write_bytes(args.out, (json.dumps(payload, indent=2) + "\n").encode())
        print(f"report: {args.out}")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    spec = synth_mod.CorpusSpec(
        train=args.train,
        test=args.test,
        families=args.families,
        width=args.width,
        height=args.height,
        observers=args.observers,
        fixations_per_observer=args.fixations_per_observer,
        seed=args.seed,
    )
    synth_mod.generate_corpus(args.out, spec)
    print(f"corpus: {args.out}")
    print(f"train: {spec.train}  test: {spec.test}  families: {spec.families}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def _add_ensemble_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=pred_mod.DEFAULT_N,
                   help="ensemble size, capped at the bank size (default 697)")
    p.add_argument("--alpha", type=int, default=pred_mod.DEFAULT_ALPHA,
                   help="attenuation exponent (default 6)")
    p.add_argument("--sigma", type=float, default=pred_mod.DEFAULT_SIGMA_SMOOTH,
                   help="final smoothing std in pixels (default 13)")
    p.add_argument("--prior", help="spatial prior file; omit to run without one")
    p.add_argument("--no-prior", action="store_true",
                   help="ignore --prior even when given")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iseel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-bank", help="train one unit per image and save the bank")
    p.add_argument("--images", required=True, help="image directory (pgm/ppm/png)")
    p.add_argument("--fixations", required=True, help="fixation CSV")
    p.add_argument("--features", help="directory of <id>.feat/<id>.desc sidecars")
    p.add_argument("--out", required=True, help="output bank file")
    p.add_argument("--hidden", type=int, default=20,
                   help="hidden units per trained unit (default 20)")
    p.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    p.add_argument("--activation", choices=("sigmoid", "tanh"), default="sigmoid")
    p.add_argument("--scales", type=int, default=3,
                   help="stand-in feature pyramid depth (default 3)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("predict", help="predict saliency maps from a bank")
    p.add_argument("--images", required=True, help="image file or directory")
    p.add_argument("--bank", required=True, help="bank file")
    p.add_argument("--features", help="directory of <id>.feat/<id>.desc sidecars")
    p.add_argument("--out", required=True,
                   help="output map file (single image) or directory")
    p.add_argument("--pgm", action="store_true", help="also export 8-bit PGM views")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    _add_ensemble_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fit-prior", help="fit the fixation position prior")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--fixations", required=True, help="fixation CSV")
    p.add_argument("--out", required=True, help="output prior file")
    p.add_argument("--std", type=float, default=pred_mod.DEFAULT_PRIOR_STD,
                   help="kernel std in normalized coordinates (default 0.08)")
    p.set_defaults(func=cmd_fit_prior)

    p = sub.add_parser("evaluate", help="score maps against fixations")
    p.add_argument("--maps", help="directory of .map files to score")
    p.add_argument("--bank", help="bank file: predict on the fly instead of --maps")
    p.add_argument("--images", help="image directory (required with --bank)")
    p.add_argument("--fixations", required=True, help="fixation CSV")
    p.add_argument("--metrics", type=_metric_list,
                   default=["nss", "auc_judd", "auc_borji", "sauc", "sim", "cc", "kl"],
                   help="comma-separated metric names (default: all but emd)")
    p.add_argument("--splits", type=int, default=100,
                   help="negative resamplings for auc_borji/sauc (default 100)")
    p.add_argument("--seed", type=int, default=0, help="shuffle seed (default 0)")
    p.add_argument("--sigma-gt", type=float, default=None,
                   help="ground-truth density std in pixels (default: 3%% of max side)")
    p.add_argument("--out", help="write per-image CSV (+ .json summary)")
    _add_ensemble_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="grid-search n/alpha/sigma by mean KL")
    p.add_argument("--images", required=True, help="validation image directory")
    p.add_argument("--fixations", required=True, help="validation fixation CSV")
    p.add_argument("--bank", required=True, help="bank file")
    p.add_argument("--n", type=_int_list, default=[1, 5, 10, 20, 50, 100, 697],
                   help="comma-separated ensemble sizes")
    p.add_argument("--alpha", type=_int_list, default=[1, 2, 4, 6, 8],
                   help="comma-separated attenuation exponents")
    p.add_argument("--sigma", type=_float_list, default=[3.0, 7.0, 13.0, 19.0],
                   help="comma-separated smoothing stds")
    p.add_argument("--prior", help="spatial prior file")
    p.add_argument("--no-prior", action="store_true")
    p.add_argument("--sigma-gt", type=float, default=None,
                   help="ground-truth density std in pixels")
    p.add_argument("--out", help="write the full search table as JSON")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser(
        "similarity-experiment",
        help="score fixation transfer between most/least similar scene pairs",
    )
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--fixations", required=True, help="fixation CSV")
    p.add_argument("--splits", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-gt", type=float, default=None)
    p.add_argument("--out", help="write the full report as JSON")
    p.set_defaults(func=cmd_similarity_experiment)

    p = sub.add_parser("gen-synthetic", help="generate a blob-scene test corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--train", type=int, default=30)
    p.add_argument("--test", type=int, default=10)
    p.add_argument("--families", type=int, default=4)
    p.add_argument("--width", type=int, default=synth_mod.DEFAULT_WIDTH)
    p.add_argument("--height", type=int, default=synth_mod.DEFAULT_HEIGHT)
    p.add_argument("--observers", type=int, default=3)
    p.add_argument("--fixations-per-observer", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
