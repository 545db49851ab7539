"""``fpcrf`` command line: preprocess, infer, train, eval, bench.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_csv, run_bench
from .config import apply_setting, config_lines, finalize, parse_config
from .errors import ConfigError, NumericError
from .evaluation import evaluate_run, metrics_csv
from .fields import labels_from_tensor, unary_from_probabilities
from .inference import map_labels
from .io import read_mask_pgm, read_tensor, write_mask_pgm, write_tensor
from .pipeline import (
    RunManifest,
    infer_tiled,
    labels_to_mask,
    load_checkpoint,
    load_dataset,
    needs_rgb,
    prepare_features,
    resolve_threads,
    save_checkpoint,
)
from .preprocess import (
    apply_shift,
    coregister,
    extract_patches,
    quantize_distance,
    signed_distance,
)
from .training import LogisticUnary, Model, TrainConfig, train

log = logging.getLogger("fpcrf")

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4

# config keys exposed as --flags on every subcommand
_OVERRIDES = (
    "kernels", "kernel_weights", "filter_radius", "iterations", "tolerance",
    "theta_alpha", "theta_beta", "theta_gamma", "theta_delta", "theta_zeta", "theta_eta",
    "learning_rate", "epochs", "batch_size", "seed", "trainable", "classes",
    "truncation", "search_radius", "patch_size", "overlap", "feature_window",
)


def _load_config(args):
    config = parse_config(args.config)
    for key in _OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            apply_setting(config, key, value)
    threads = resolve_threads(args.threads)
    if threads is not None:
        apply_setting(config, "threads", threads)
    return finalize(config)


def _manifest(args, config, subcommand):
    return RunManifest(
        subcommand=subcommand,
        config=None if args.config is None else str(args.config),
        settings=config_lines(config),
        seed=config.settings.seed,
        threads=config.settings.threads,
    )


def _out_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_preprocess(args):
    config = _load_config(args)
    s = config.settings
    man = _manifest(args, config, "preprocess")
    out = _out_dir(args.out)
    man.inputs = {"image": str(args.image), "mask": str(args.mask)}
    with man.stage("read-image"):
        image = read_tensor(args.image).astype(np.float64)
        if image.ndim != 3 or image.shape[-1] != 3:
            raise ConfigError(f"{args.image}: expected an (H, W, 3) image, got {image.shape}")
    with man.stage("read-mask"):
        mask = read_mask_pgm(args.mask)
        if mask.shape != image.shape[:2]:
            raise ConfigError(f"mask {mask.shape} and image {image.shape[:2]} differ in size")
    with man.stage("coregistration"):
        shift = coregister(mask, image, s.search_radius)
        aligned = apply_shift(mask, (-shift.dy, -shift.dx))
    with man.stage("signed-distance"):
        distance = signed_distance(aligned, s.truncation)
        labels = quantize_distance(distance, s.truncation)
    with man.stage("write"):
        write_mask_pgm(aligned, out / "aligned_mask.pgm")
        write_tensor(distance, out / "distance.fpt")
        write_tensor(labels, out / "labels.fpt")
    with man.stage("patches"):
        patches = extract_patches(image, labels, s.patch_size, s.overlap)
        pdir = _out_dir(out / "patches")
        for i, p in enumerate(patches):
            write_tensor(p.image, pdir / f"{i:04d}.image.fpt")
            write_tensor(p.labels, pdir / f"{i:04d}.labels.fpt")
    man.results = {
        "shift": [shift.dy, shift.dx],
        "score": shift.score,
        "patches": [[p.row, p.col] for p in patches],
    }
    man.outputs = {"dir": str(out)}
    man.write(out / "manifest.json")
    print(f"shift dy={shift.dy} dx={shift.dx} (score {shift.score:.4f}); "
          f"{len(patches)} patches -> {out}")


def cmd_infer(args):
    config = _load_config(args)
    s = config.settings
    man = _manifest(args, config, "infer")
    out = _out_dir(args.out)
    window = s.feature_window
    with man.stage("load"):
        if args.checkpoint:
            model, window = load_checkpoint(args.checkpoint)
            man.inputs["checkpoint"] = str(args.checkpoint)
        else:
            model = Model(config.params)
        image = read_tensor(args.image).astype(np.float64) if args.image else None
        feats = read_tensor(args.features).astype(np.float64) if args.features else None
        if args.unary and args.probabilities:
            raise ConfigError("give either --unary or --probabilities, not both")
        if args.unary:
            unary = read_tensor(args.unary).astype(np.float64)
        elif args.probabilities:
            unary = unary_from_probabilities(read_tensor(args.probabilities))
        else:
            unary = None
        man.inputs.update({k: str(v) for k, v in (
            ("image", args.image), ("features", args.features),
            ("unary", args.unary), ("probabilities", args.probabilities)) if v})
    with man.stage("features"):
        features = prepare_features(feats, image, window)
        if unary is None:
            if model.unary is None:
                raise ConfigError("no unary input and the checkpoint has no unary model")
            unary = model.unary.potentials(features)
        classes = unary.shape[-1]
        if model.params.classes is not None and model.params.classes != classes:
            raise ConfigError(
                f"unary has {classes} classes but the checkpoint expects "
                f"{model.params.classes}"
            )
        params = model.params.with_classes(classes)
        if needs_rgb(params) and image is None:
            raise ConfigError("the appearance kernel needs --image")
    with man.stage("mean-field"):
        result = infer_tiled(features, unary, params, image_rgb=image,
                             patch_size=s.patch_size, overlap=s.overlap, threads=s.threads)
    with man.stage("write"):
        labels = map_labels(result.marginals)
        mask = labels_to_mask(labels, classes)
        write_tensor(result.marginals, out / "marginals.fpt")
        write_tensor(labels, out / "labels.fpt")
        write_mask_pgm(mask, out / "mask.pgm")
    man.results = {
        "classes": classes,
        "tiles": result.tiles,
        "seam_disagreement": result.seam_disagreement,
        "iterations": result.iterations,
    }
    man.outputs = {"dir": str(out)}
    man.write(out / "manifest.json")
    print(f"{result.tiles} tile(s), {classes} classes -> {out}")


def cmd_train(args):
    config = _load_config(args)
    s = config.settings
    man = _manifest(args, config, "train")
    out = _out_dir(args.out)
    window = s.feature_window
    with man.stage("load"):
        if args.resume:
            model, window = load_checkpoint(args.resume)
        else:
            model = Model(config.params.with_classes(s.classes))
        patches = load_dataset(args.data, s.classes, window)
        trainable = tuple(s.trainable)
        if any(p.unary is None for p in patches) and model.unary is None:
            model.unary = LogisticUnary.zeros(patches[0].features.shape[-1], s.classes)
            if "unary" not in trainable:
                log.info("dataset has no unary files; training a logistic unary")
                trainable = trainable + ("unary",)
    man.inputs = {"data": str(args.data), "patches": len(patches)}
    tconf = TrainConfig(learning_rate=s.learning_rate, epochs=s.epochs,
                        batch_size=s.batch_size, seed=s.seed, trainable=trainable,
                        threads=s.threads)

    def report(epoch, loss, _model):
        log.info("epoch %d: loss %.6f", epoch + 1, loss)

    with man.stage("train"):
        model, history = train(patches, model, tconf, callback=report)
    with man.stage("write"):
        save_checkpoint(model, out, feature_window=window)
        with open(out / "loss_history.csv", "w", encoding="utf-8") as fh:
            fh.write("epoch,loss\n")
            for i, loss in enumerate(history, start=1):
                fh.write(f"{i},{loss!r}\n")
    man.results = {"loss_history": history, "trainable": list(trainable)}
    man.outputs = {"checkpoint": str(out)}
    man.write(out / "manifest.json")
    last = f"{history[-1]:.6f}" if history else "n/a"
    print(f"{len(history)} epoch(s), final loss {last} -> {out}")


def _read_binary(path, classes):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_mask_pgm(path)
    return labels_to_mask(labels_from_tensor(read_tensor(path)), classes)


def cmd_eval(args):
    config = _load_config(args)
    man = _manifest(args, config, "eval")
    classes = config.settings.classes
    with man.stage("load"):
        preds = [_read_binary(p, classes) for p in args.pred]
        truths = [_read_binary(t, classes) for t in args.truth]
    with man.stage("metrics"):
        rows, total = evaluate_run(preds, truths, per_patch=args.per_patch,
                                   names=[Path(p).name for p in args.pred])
        text = metrics_csv(rows, total)
    man.inputs = {"pred": [str(p) for p in args.pred], "truth": [str(t) for t in args.truth]}
    man.results = {"degenerate": total.degenerate}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        man.outputs = {"csv": str(out)}
        man.write(out.with_suffix(".manifest.json"))
    sys.stdout.write(text)


def cmd_bench(args):
    config = _load_config(args)
    man = _manifest(args, config, "bench")
    try:
        radii = [int(r) for r in args.radii.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad --radii value {args.radii!r}") from None
    for r in radii:
        if r < 2:
            raise ConfigError(f"filter_radius must be >= 2, got {r} in sweep")
    with man.stage("sweep"):
        rows = run_bench(
            radii,
            classes=args.bench_classes,
            size=args.size,
            iterations=config.params.iterations,
            repeats=args.repeats,
            seed=config.settings.seed,
            n_train=args.train_patches,
            n_test=args.test_patches,
            patch_size=args.synthetic_size,
            crf_epochs=args.crf_epochs,
        )
    text = bench_csv(rows)
    man.results = {"rows": len(rows)}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        man.outputs = {"csv": str(out)}
        man.write(out.with_suffix(".manifest.json"))
    sys.stdout.write(text)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--threads", type=int,
                        help="patch-level worker threads (fallback: FPCRF_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")
    for key in _OVERRIDES:
        common.add_argument("--" + key.replace("_", "-"), dest=key, metavar="VALUE",
                            help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="fpcrf",
        description="Feature pairwise CRF inference, training and evaluation.",
        epilog="Every config key is also accepted as a flag, e.g. --filter-radius 7.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common],
                       help="coregister a mask and build distance labels and patches")
    p.add_argument("--image", type=Path, required=True, help="FPT1 (H, W, 3) image")
    p.add_argument("--mask", type=Path, required=True, help="P5 PGM footprint mask")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("infer", parents=[common], help="mean-field refinement")
    p.add_argument("--features", type=Path, help="FPT1 (H, W, D) features")
    p.add_argument("--image", type=Path,
                   help="FPT1 (H, W, 3) image; toy features when --features is absent")
    p.add_argument("--unary", type=Path, help="FPT1 (H, W, C) unary potentials")
    p.add_argument("--probabilities", type=Path, help="FPT1 (H, W, C) class probabilities")
    p.add_argument("--checkpoint", type=Path, help="checkpoint directory from 'train'")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", parents=[common], help="learn CRF parameters")
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, required=True, help="checkpoint directory")
    p.add_argument("--resume", type=Path, help="start from this checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="OA / precision / recall / F1 / IoU")
    p.add_argument("--pred", type=Path, nargs="+", required=True)
    p.add_argument("--truth", type=Path, nargs="+", required=True)
    p.add_argument("--per-patch", action="store_true")
    p.add_argument("--out", type=Path, help="CSV output (stdout always gets a copy)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="timing and IoU sweep over r")
    p.add_argument("--radii", default="3,5,7,9")
    p.add_argument("--size", type=int, default=256, help="timing grid side")
    p.add_argument("--bench-classes", type=int, default=11, help="labels in the timing run")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--train-patches", type=int, default=20)
    p.add_argument("--test-patches", type=int, default=10)
    p.add_argument("--synthetic-size", type=int, default=128)
    p.add_argument("--crf-epochs", type=int, default=1)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_bench)
    return parser


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (NumericError, ValueError, ArithmeticError)):
        return EXIT_NUMERIC
    return None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        stage = getattr(exc, "stage", None)
        where = f"{args.command}/{stage}" if stage else args.command
        print(f"fpcrf {where}: error: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
