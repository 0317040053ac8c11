"""Command-line entry point: split, stats, tile, train, infer, evaluate.

Exit codes: 0 success, 1 bad input data, 2 usage error. Settings come from
built-in defaults, then an optional ``--config`` JSON file, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .classifier import ConstantClassifier, RecordedClassifier
from .core import RandomStream, parse_label
from .errors import PipelineError
from .evaluation import confusion, format_report, load_confusion, report
from .inference import DecisionThresholds, classify_slide
from .ingest import (
    CropRecord,
    SlideRecord,
    atomic_write_text,
    format_manifest,
    load_manifest,
    read_image,
    split_dataset,
)
from .nnet.optim import SGDConfig
from .pipeline import TrainedPipeline, fit_pipeline
from .preprocess import AugmentConfig, compute_stats, fit_color_pca
from .tiler import PatchSpec, estimate_patch_size, format_tiles, tile

log = logging.getLogger("polypwsi")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _slides(args, split=None) -> list[SlideRecord]:
    if not args.manifest:
        raise UsageError("--manifest is required")
    records = load_manifest(args.manifest)
    if records and not isinstance(records[0], SlideRecord):
        raise UsageError("--manifest must be a slide manifest (id, path, label, split)")
    if split:
        records = [r for r in records if r.split_tag == split]
    return records


def _image_root(args):
    if args.images:
        return Path(args.images)
    return Path(args.manifest).parent if args.manifest else None


def _crop_records(path) -> list[CropRecord]:
    records = load_manifest(path)
    if records and not isinstance(records[0], CropRecord):
        raise UsageError("--crops must be a crop manifest (id, parent, x, y, width, height, label)")
    return records


def _patch_spec(args, default_size=None) -> PatchSpec:
    if args.patch_width or args.patch_height:
        w = args.patch_width or args.patch_height
        h = args.patch_height or args.patch_width
    elif getattr(args, "crops", None):
        w, h = estimate_patch_size(_crop_records(args.crops), args.subset_fraction, RandomStream(args.seed).spawn("patch-size"))
    elif default_size is not None:
        w, h = default_size
    else:
        raise UsageError("give --patch-width/--patch-height (or --crops / a model to derive them)")
    return PatchSpec(int(w), int(h), args.overlap)


# -- subcommands --------------------------------------------------------------


def cmd_split(args) -> int:
    records = _slides(args)
    held = [r for r in records if r.split_tag == "test"]
    pool = [r for r in records if r.split_tag != "test"]
    train, val = split_dataset(pool, args.validation_fraction, RandomStream(args.seed))
    tagged = {r.id: r for r in train + val + held}
    _emit(format_manifest([tagged[r.id] for r in records]), args.out)
    log.info("split: %d train, %d validation, %d test", len(train), len(val), len(held))
    return 0


def cmd_stats(args) -> int:
    root = _image_root(args)
    records = _slides(args, split="train") or _slides(args)
    images = [read_image(r.resolve(root)) for r in records]
    stats = compute_stats(images)
    rng = RandomStream(args.seed).spawn("pca")
    k = max(1, math.ceil(len(images) * args.pca_fraction - 1e-9))
    pca = fit_color_pca([images[i] for i in sorted(rng.sample_indices(len(images), k))])
    doc = {
        "mean": list(stats.mean),
        "std": list(stats.std),
        "eigenvalues": pca.eigenvalues.tolist(),
        "eigenvectors": pca.eigenvectors.tolist(),
        "seed": args.seed,
    }
    _emit(_dumps(doc), args.out)
    return 0


def cmd_tile(args) -> int:
    spec = _patch_spec(args)
    if args.image:
        img = read_image(args.image)
        _emit(format_tiles(tile(img.shape[1], img.shape[0], spec), spec), args.out)
        return 0
    records = _slides(args)
    if not args.out:
        raise UsageError("--out DIR is required when tiling a manifest")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    root = _image_root(args)

    def one(r):
        img = read_image(r.resolve(root))
        atomic_write_text(out / f"{r.id}.tsv", format_tiles(tile(img.shape[1], img.shape[0], spec), spec))
        log.info("%s: %dx%d", r.id, img.shape[1], img.shape[0])

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(one, records))
    else:
        for r in records:
            one(r)
    return 0


def _training_examples(args, split):
    root = _image_root(args)
    slides = _slides(args)
    if args.crops:
        by_id = {r.id: r for r in slides}
        wanted = {r.id for r in slides if r.split_tag == split}
        cache, images, labels = {}, [], []
        for c in _crop_records(args.crops):
            if c.parent_slide_id not in by_id:
                raise PipelineError(f"crop {c.id!r} references unknown slide {c.parent_slide_id!r}")
            if c.parent_slide_id not in wanted:
                continue
            if c.parent_slide_id not in cache:
                cache[c.parent_slide_id] = read_image(by_id[c.parent_slide_id].resolve(root))
            images.append(c.cut(cache[c.parent_slide_id]))
            labels.append(int(c.reference_label))
        return images, labels
    chosen = [r for r in slides if r.split_tag == split]
    return [read_image(r.resolve(root)) for r in chosen], [int(r.reference_label) for r in chosen]


def cmd_train(args) -> int:
    if not args.out:
        raise UsageError("--out MODEL is required")
    images, labels = _training_examples(args, "train")
    if not images:
        raise PipelineError("no training examples (no rows with split 'train')")
    val_images, val_labels = _training_examples(args, "validation")
    config = SGDConfig(
        initial_rate=args.lr, decay_factor=args.decay_factor, decay_every=args.decay_every,
        momentum=args.momentum, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
    )
    augment = None if args.no_augment else AugmentConfig(args.jitter_sigma, args.flip_probability, args.rotation_mode)
    trained = fit_pipeline(
        images, labels, config, augment, subset_fraction=args.subset_fraction, pca_fraction=args.pca_fraction,
        validation=(val_images, val_labels) if val_images else None,
    )
    trained.save(args.out)
    history = trained.result.loss_history
    log.info("trained %d epochs on %d examples: loss %.4f -> %.4f", len(history), len(images), history[0], history[-1])
    if args.history:
        _emit("epoch\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(history)), args.history)
    return 0


def _recorded_for(args, slide_id):
    path = Path(args.predictions)
    if path.is_dir():
        path = path / f"{slide_id}.tsv"
    return RecordedClassifier.from_tsv(path)


def cmd_infer(args) -> int:
    if not args.out:
        raise UsageError("--out DIR is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if sum(map(bool, (args.model, args.predictions, args.constant))) != 1:
        raise UsageError("give exactly one of --model, --predictions, --constant")
    thresholds = DecisionThresholds(args.min_patches, args.min_confidence)
    trained = TrainedPipeline.load(args.model) if args.model else None
    spec = _patch_spec(args, trained.patch_size if trained else None)
    handle = None
    if trained is not None:
        handle = trained.classifier()
    elif args.constant:
        handle = ConstantClassifier.one_hot(parse_label(args.constant))
    root = _image_root(args)
    rows = ["slide_id\tpredicted\treference"]
    for r in _slides(args, split=args.split):
        if args.predictions:
            handle = _recorded_for(args, r.id)
        decision = classify_slide(read_image(r.resolve(root)), handle, spec, thresholds, jobs=args.jobs)
        atomic_write_text(out / f"{r.id}.json", _dumps(decision.to_dict(r.id)))
        rows.append(f"{r.id}\t{decision.predicted.code}\t{r.reference_label.code}")
        log.info("%s: %s (%d patches)", r.id, decision.predicted.code, decision.total_patches)
    atomic_write_text(out / "predictions.tsv", "\n".join(rows) + "\n")
    return 0


def _pairs_from_predictions(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").split("\t") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or [c.strip().lower() for c in lines[0]] != ["slide_id", "predicted", "reference"]:
        raise PipelineError(f"{path}: expected header slide_id, predicted, reference")
    for fields in lines[1:]:
        pairs.append((parse_label(fields[1]), parse_label(fields[2])))
    return pairs


def cmd_evaluate(args) -> int:
    if bool(args.confusion) == bool(args.predictions):
        raise UsageError("give exactly one of --confusion, --predictions")
    m = load_confusion(args.confusion) if args.confusion else confusion(_pairs_from_predictions(args.predictions))
    rep = report(m, interval_n=args.interval_n, exact_denominators=args.exact_intervals)
    t = rep.totals
    sys.stdout.write(format_report(rep))
    sys.stdout.write(
        f"Totals (N={rep.n_total}): accuracy {100 * t['balanced_accuracy'].value:.1f}%, "
        f"precision {100 * t['precision'].value:.1f}%, recall {100 * t['recall'].value:.1f}%, "
        f"F1 {100 * t['f1'].value:.1f}%\n"
    )
    if args.out:
        _emit(_dumps(rep.to_dict()), args.out)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_slide_dataset

    if not args.out:
        raise UsageError("--out DIR is required")
    manifest, crops = write_slide_dataset(args.out, args.train_per_class, args.test_per_class, args.size,
                                          args.crops_per_slide, seed=args.seed)
    print(manifest)
    print(crops)
    return 0


# -- parser -------------------------------------------------------------------


def _common(p, *, manifest=True, images=True):
    p.add_argument("--config", help="JSON file of option defaults (flags override it)")
    p.add_argument("--seed", type=int, default=0, help="seed for every randomized step")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (slides for tile, patches for infer)")
    p.add_argument("--out", help="output file or directory")
    if manifest:
        p.add_argument("--manifest", help="slide manifest TSV (id, path, label, split)")
    if images:
        p.add_argument("--images", help="root for relative image paths (default: manifest directory)")


def _patch_flags(p):
    p.add_argument("--patch-width", type=int, help="patch width in pixels")
    p.add_argument("--patch-height", type=int, help="patch height in pixels")
    p.add_argument("--overlap", type=float, default=0.3333, help="fractional overlap between patches")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="polypwsi", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per slide")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("split", help="stratified train/validation split of a manifest", formatter_class=fmt)
    _common(p, images=False)
    p.add_argument("--validation-fraction", type=float, default=0.15, help="fraction held out per class")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="normalization statistics and color PCA of training images", formatter_class=fmt)
    _common(p)
    p.add_argument("--pca-fraction", type=float, default=0.15, help="fraction of training images used for PCA")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tile", help="list overlapping patch origins", formatter_class=fmt)
    _common(p)
    p.add_argument("--image", help="single image to tile (instead of --manifest)")
    p.add_argument("--crops", help="crop manifest for estimating the patch size")
    p.add_argument("--subset-fraction", type=float, default=0.15, help="crop subset used for the median size")
    _patch_flags(p)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("train", help="train the residual patch classifier", formatter_class=fmt)
    _common(p)
    p.add_argument("--crops", help="crop manifest; crops are cut from the manifest's slides")
    p.add_argument("--epochs", type=int, default=200, help="training epochs")
    p.add_argument("--lr", type=float, default=0.1, help="initial learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--decay-every", type=int, default=50, help="epochs between learning-rate decays")
    p.add_argument("--decay-factor", type=float, default=0.1, help="learning-rate multiplier per decay")
    p.add_argument("--batch-size", type=int, default=32, help="mini-batch size")
    p.add_argument("--jitter-sigma", type=float, default=0.1, help="std of PCA color-jitter coefficients")
    p.add_argument("--flip-probability", type=float, default=0.5, help="probability of a horizontal flip")
    p.add_argument("--rotation-mode", choices=("random_quarter", "half_turn", "none"), default="random_quarter",
                   help="rotation augmentation")
    p.add_argument("--no-augment", action="store_true", help="disable augmentation")
    p.add_argument("--subset-fraction", type=float, default=0.15, help="subset used for the median sizes")
    p.add_argument("--pca-fraction", type=float, default=0.15, help="subset used for color PCA")
    p.add_argument("--history", help="write per-epoch training loss TSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="classify slides and write one JSON per slide", formatter_class=fmt)
    _common(p)
    p.add_argument("--model", help="checkpoint written by 'train'")
    p.add_argument("--predictions", help="recorded patch predictions TSV (or a directory of <slide_id>.tsv)")
    p.add_argument("--constant", help="classify every patch as this label (testing)")
    p.add_argument("--split", help="only slides with this split tag")
    p.add_argument("--min-patches", type=int, default=5, help="patches required to call a polyp class")
    p.add_argument("--min-confidence", type=float, default=0.70, help="mean confidence required")
    _patch_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="metrics with exact 95%% intervals", formatter_class=fmt)
    _common(p, manifest=False, images=False)
    p.add_argument("--confusion", help="confusion matrix TSV (rows predicted, columns reference)")
    p.add_argument("--predictions", help="predictions.tsv written by 'infer'")
    p.add_argument("--interval-n", type=int, help="N for interval counts k = round(v*N) (default: matrix total)")
    p.add_argument("--exact-intervals", action="store_true", help="use each metric's own denominator")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic slide dataset for demos", formatter_class=fmt)
    _common(p, manifest=False, images=False)
    p.add_argument("--train-per-class", type=int, default=10, help="training slides per class")
    p.add_argument("--test-per-class", type=int, default=10, help="test slides per class")
    p.add_argument("--size", type=int, default=96, help="slide side length in pixels")
    p.add_argument("--crops-per-slide", type=int, default=4, help="crops cut from each training slide")
    p.set_defaults(func=cmd_synth)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            conf = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(conf, dict):
        raise UsageError("config file must hold a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    conf = {k.replace("-", "_"): v for k, v in conf.items()}
    unknown = sorted(set(conf) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    subparser.set_defaults(**conf)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"polypwsi: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"polypwsi: error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"polypwsi: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"polypwsi: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
