"""Command-line front door.

Subcommands
    filter   low-pass one raster image, optionally writing a residual map
    poison   build a poisoned dataset (IDX pair + partition manifest)
    train    fit the built-in classifier on a dataset directory/source
    eval     score a trained model (CSA, ASR, optional radius sweep and
             PSNR/SSIM means) into a report file
    metrics  PSNR/SSIM between two raster images
    defend   strip | fineprune | cleanse evaluations into report files

Every report embeds the invoking configuration, so reruns with the same
seed reproduce reports byte-for-byte. Exit codes: 0 success, 2 usage,
3 missing file, 4 invalid configuration/invariant, 5 data or model format
error, 6 diverged optimisation, 1 unexpected failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import datasets, defenses, frequency, metrics, poisoning, report
from .errors import (
    ConfigError,
    DataFormatError,
    LpbdError,
    ModelIOError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .model import TrainConfig, init_model, load_model, save_model, train_sgd

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_FORMAT = 5
EXIT_DIVERGED = 6

logger = logging.getLogger("lpbd")


def _config_section(args: argparse.Namespace) -> dict[str, object]:
    skip = {"func"}
    body = {"command": args.command}
    if getattr(args, "defense", None):
        body["defense"] = args.defense
    for key in sorted(vars(args)):
        if key in skip or key in ("command", "defense"):
            continue
        value = getattr(args, key)
        if value is not None:
            body[key.replace("_", "-")] = value
    return body


def _parse_sweep(text: str, rmax: int) -> list[int]:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ConfigError(f"sweep must look like A..B, got {text!r}")
    start = int(lo)
    end = rmax if hi == "rmax" else int(hi)
    if start > end:
        raise ConfigError(f"empty sweep {text!r}")
    return list(range(start, end + 1))


def cmd_filter(args) -> int:
    image = datasets.load_ppm(args.in_path)
    filtered = frequency.low_pass(image, args.radius)
    datasets.save_ppm(filtered, args.out)
    if args.residual:
        datasets.save_ppm(frequency.residual_map(image, filtered, args.gain), args.residual)
    return EXIT_OK


def cmd_poison(args) -> int:
    data = datasets.resolve_data_source(args.data)
    spec = poisoning.PoisonSpec(
        radius=args.radius,
        rate=args.rate,
        target=args.target,
        delta=args.delta,
        precision=args.precision,
        seed=args.seed,
    )
    h, w, _ = data.image_shape
    spec.validate(h, w, data.num_classes)
    parts = poisoning.partition(data, spec)
    if args.trigger == "badnets":
        poisoned = poisoning.build_patch_dataset(data, spec, parts)
    else:
        poisoned = poisoning.build_poisoned_dataset(data, spec, parts)
    os.makedirs(args.out, exist_ok=True)
    datasets.save_idx(poisoned, os.path.join(args.out, "images.idx"),
                      os.path.join(args.out, "labels.idx"))
    manifest = {
        "config": _config_section(args),
        "dataset": {
            "count": len(poisoned),
            "height": h,
            "width": w,
            "channels": data.image_shape[2],
            "num_classes": data.num_classes,
        },
        "partition": {
            "clean_count": len(parts.clean),
            "poisoned_count": len(parts.poisoned),
            "precision_count": len(parts.precision),
            "poisoned": ",".join(map(str, parts.poisoned)),
            "precision": ",".join(map(str, parts.precision)),
        },
    }
    report.write_report(os.path.join(args.out, "manifest.txt"), manifest)
    logger.info("wrote %d samples (%d poisoned, %d precision) to %s",
                len(poisoned), len(parts.poisoned), len(parts.precision), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    data = datasets.resolve_data_source(args.data)
    config = TrainConfig(
        lr=args.lr,
        lr_decay_epoch=args.decay_epoch,
        momentum=args.momentum,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        a_star=args.a_star,
    )
    model = init_model(args.arch, data.image_shape, data.num_classes, seed=args.seed)
    val = datasets.resolve_data_source(args.val_data) if args.val_data else None
    train_sgd(model, data, config, val=val)
    save_model(model, args.out)
    logger.info("saved model to %s", args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = datasets.resolve_data_source(args.data)
    h, w, _ = data.image_shape
    csa = metrics.clean_accuracy(model, data)
    asr = metrics.attack_success_rate(model, data, args.radius, args.target)
    sweep = {}
    if args.sweep:
        radii = _parse_sweep(args.sweep, frequency.r_max(h, w))
        sweep = metrics.asr_radius_sweep(model, data, radii, args.target)
    psnr_mean = ssim_mean = None
    if not args.no_quality:
        limit = min(args.quality_count, len(data))
        originals = data.images[:limit]
        filtered = frequency.low_pass_batch(originals, args.radius)
        psnr_mean, ssim_mean = metrics.mean_quality(originals, filtered)
    result = metrics.EvalReport(
        csa=csa,
        asr=asr,
        per_radius_asr=sweep,
        psnr_mean=psnr_mean,
        ssim_mean=ssim_mean,
        pollution_rate=args.rate,
        radius=args.radius,
        target=args.target,
        seed=args.seed,
    )
    sections = {"run": _config_section(args)}
    sections.update(result.sections())
    report.write_report(args.report, sections)
    logger.info("csa %.4f asr %.4f -> %s", csa, asr, args.report)
    return EXIT_OK


def cmd_metrics(args) -> int:
    a = datasets.load_ppm(args.a)
    b = datasets.load_ppm(args.b)
    psnr_value = metrics.psnr(a, b)
    ssim_value = metrics.ssim(a, b)
    sections = {
        "run": _config_section(args),
        "quality": {"psnr": psnr_value, "ssim": ssim_value},
    }
    if args.report:
        report.write_report(args.report, sections)
    print(f"psnr = {report.format_value(psnr_value)}")
    print(f"ssim = {report.format_value(ssim_value)}")
    return EXIT_OK


def _poisoned_eval_images(args, data):
    keep = data.labels != args.target
    images = data.images[keep][: args.count]
    if args.trigger == "badnets":
        patched = images.copy()
        patched[:, -poisoning.PATCH_SIZE:, -poisoning.PATCH_SIZE:, :] = 1.0
        return patched
    return frequency.low_pass_batch(images, args.radius)


def cmd_defend(args) -> int:
    model = load_model(args.model)
    data = datasets.resolve_data_source(args.data)
    sections = {"run": _config_section(args)}
    if args.defense == "strip":
        clean = data.subset(np.arange(min(args.count, len(data))))
        poisoned = _poisoned_eval_images(args, data)
        result = defenses.strip_report(model, clean, poisoned,
                                       n_overlays=args.overlays, seed=args.seed)
        sections.update(result.sections())
    elif args.defense == "fineprune":
        probe = data.subset(np.arange(min(args.count, len(data))))
        curve = defenses.fine_prune_curve(
            model, probe, data, data, args.radius, args.target,
            layer=args.layer, step=args.step,
        )
        sections.update(curve.sections())
    else:  # cleanse
        clean = data.subset(np.arange(min(args.count, len(data))))
        result = defenses.cleanse(
            model, clean,
            lam=args.lam, steps=args.steps, step_size=args.step_size,
            batch_size=args.batch_size, seed=args.seed,
            optimizer=args.optimizer, init_mask=args.init_mask,
        )
        sections.update(result.sections())
    report.write_report(args.report, sections)
    logger.info("wrote defense report to %s", args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpbd",
        description="Low-pass frequency-domain backdoor toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="low-pass filter one PPM/PGM image")
    p.add_argument("--in", dest="in_path", required=True, metavar="PATH")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--residual", default=None)
    p.add_argument("--gain", type=float, default=10.0)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("poison", help="build a poisoned dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--radius", type=int, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--precision", action="store_true")
    p.add_argument("--delta", type=int, default=3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--trigger", choices=["lowpass", "badnets"], default="lowpass")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("train", help="train the built-in classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=["mlp", "cnn"], default="cnn")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--decay-epoch", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--a-star", type=float, default=None)
    p.add_argument("--val-data", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model into a report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--radius", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--sweep", default=None, metavar="A..B")
    p.add_argument("--rate", type=float, default=None, help="echoed into the report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-quality", action="store_true")
    p.add_argument("--quality-count", type=int, default=1000)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("defend", help="run a defense evaluation")
    p.add_argument("defense", choices=["strip", "fineprune", "cleanse"])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--radius", type=int, default=8)
    p.add_argument("--target", type=int, default=0)
    p.add_argument("--trigger", choices=["lowpass", "badnets"], default="lowpass")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--overlays", type=int, default=64)
    p.add_argument("--layer", default=None)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--lam", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=["adam", "momentum"], default="adam")
    p.add_argument("--init-mask", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_defend)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stdout)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error[missing-file]: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, ShapeMismatchError) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ModelIOError) as exc:
        print(f"error[format]: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDivergedError as exc:
        print(f"error[diverged]: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except LpbdError as exc:
        print(f"error[internal]: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
