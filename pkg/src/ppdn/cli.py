"""Command-line entry point: train, denoise, eval, verify-theory, degrade-preview.

Results go to stdout, diagnostics to stderr. Exit codes: 0 success,
2 config parse error, 3 dataset error, 4 diverged training, 5 bad
checkpoint. Every subcommand is deterministic given --seed; without the
flag a time-derived seed is drawn and printed so runs stay reproducible
after the fact. PPDN_LOG in {error, info, debug} controls verbosity.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

from .checkpoint import load_checkpoint
from .degrade import JpegSpec, ShiftSpec, jpeg_compress, jpeg_decay, shift, shift_rows
from .errors import (
    CheckpointFormatError,
    ConfigError,
    DivergedLossError,
    EmptyDatasetError,
    PpdnError,
    UnsupportedFormatError,
)
from .image import load_image, save_image
from .metrics import evaluate
from .network import ArchConfig, init
from .noise import GAUSSIAN, POISSON, NoiseSpec
from .rng import RngStream
from .synthetic import make_corpus_patches
from .theory import (
    verify_constant_reduction,
    verify_n2n,
    verify_nr2n,
    verify_r2r,
)
from .training import TrainConfig, denoise, format_config, parse_config, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5

log = logging.getLogger("ppdn")


def _setup_logging():
    level = os.environ.get("PPDN_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(stream=sys.stderr, level=levels[level], format="%(levelname)s %(message)s")


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    seed = time.time_ns() % (2**63)
    print(f"seed = {seed}  (time-derived; pass --seed to pin)")
    return seed


def _split_overrides(pairs):
    out = []
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out.append((key.strip(), value.strip()))
    return out


def _effective_config(args):
    overrides = _split_overrides(args.set)
    seen = set()
    config = parse_config(path=args.config, overrides=overrides, seen=seen)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    elif "seed" not in seen:
        config = replace(config, seed=_resolve_seed(args))
    return config


def cmd_train(args):
    config = _effective_config(args)
    print("# effective config")
    print(format_config(config))
    if not os.path.isdir(args.data):
        print(f"data directory not found: {args.data}", file=sys.stderr)
        return EXIT_DATASET
    try:
        train(
            config,
            args.data,
            args.out,
            telemetry_path=args.telemetry,
            resume_from=args.resume,
        )
    except EmptyDatasetError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATASET
    except DivergedLossError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGED
    print(f"checkpoint written: {args.out}")
    return EXIT_OK


def _noise_from_args(args, rng=None):
    if args.family == POISSON:
        lo, hi = (float(v) for v in args.lambda_range.split(","))
        return NoiseSpec(family=POISSON, lambda_range=(lo, hi), rng=rng)
    return NoiseSpec(family=GAUSSIAN, sigma=args.sigma / 255.0, rng=rng)


def cmd_eval(args):
    seed = _resolve_seed(args)
    try:
        model = load_checkpoint(args.model)
    except FileNotFoundError:
        print(f"checkpoint not found: {args.model}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except CheckpointFormatError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECKPOINT
    if not os.path.isdir(args.data):
        print(f"testset directory not found: {args.data}", file=sys.stderr)
        return EXIT_DATASET
    noise = _noise_from_args(args)
    print(f"# eval  model={args.model}  data={args.data}  noise={noise.describe()}  seed={seed}")
    try:
        report = evaluate(
            model,
            args.data,
            noise,
            seed,
            two_pass=args.two_pass,
            checkpoint_id=args.model,
            jobs=args.jobs,
        )
    except EmptyDatasetError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATASET
    prefix = args.out_prefix or (os.path.splitext(args.model)[0] + ".eval")
    report.write_csv(prefix + ".csv")
    report.write_json(prefix + ".json")
    print(f"SSIM/PSNR = {report.mean_ssim:.4f}/{report.mean_psnr:.2f}")
    print(f"report written: {prefix}.csv, {prefix}.json")
    return EXIT_OK


def cmd_denoise(args):
    try:
        model = load_checkpoint(args.model)
    except FileNotFoundError:
        print(f"checkpoint not found: {args.model}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except CheckpointFormatError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECKPOINT
    try:
        img = load_image(args.input)
    except (FileNotFoundError, UnsupportedFormatError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATASET
    out = denoise(model, img, two_pass=args.two_pass)
    save_image(args.output, out)
    print(f"denoised image written: {args.output}")
    return EXIT_OK


def cmd_verify_theory(args):
    seed = _resolve_seed(args)
    rng = RngStream(seed, "verify")
    sigma1 = args.sigma1 / 255.0
    sigma2 = args.sigma2 / 255.0
    corpus = make_corpus_patches(rng.derive("corpus"), args.corpus_size, args.patch_size, channels=1)
    estimator = init(
        ArchConfig(depth=3, width=8, in_channels=1, out_channels=1), rng.derive("estimator")
    )
    estimator.train_mode = False
    results = []
    if args.method in ("n2n", "all"):
        results.append(
            verify_n2n(corpus, sigma1, sigma2, estimator, args.samples, rng.derive("n2n"))
        )
    if args.method in ("nr2n", "all"):
        results.append(
            verify_nr2n(corpus, sigma1, sigma1, estimator, args.samples, rng.derive("nr2n"))
        )
    if args.method in ("r2r", "all"):
        results.append(
            verify_r2r(
                corpus, sigma1, sigma1, sigma1, estimator, args.samples, rng.derive("r2r")
            )
        )
    if args.method in ("constant-reduction", "all"):
        big = make_corpus_patches(rng.derive("corpus40"), 32, 40, channels=1)
        noise = NoiseSpec(family=GAUSSIAN, sigma=sigma2, rng=rng.derive("noise"))
        jpeg = JpegSpec(quality_range=(0.8, 0.999999), rng=rng.derive("jpeg"))
        results.append(verify_constant_reduction(big, noise, jpeg, args.trials, rng.derive("cr")))
    import json as _json

    payload = [r.summary() for r in results]
    text = _json.dumps(payload if len(payload) > 1 else payload[0], indent=2)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"report written: {args.out}", file=sys.stderr)
    for r in results:
        summary = r.summary()
        if "residual" in summary and summary["stderr"] > 0:
            ratio = abs(summary["residual"]) / summary["stderr"]
            print(f"# {summary['method']}: |residual|/stderr = {ratio:.2f}", file=sys.stderr)
    return EXIT_OK


def cmd_degrade_preview(args):
    seed = _resolve_seed(args)
    try:
        img = load_image(args.input)
    except (FileNotFoundError, UnsupportedFormatError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATASET
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    if args.shift_k is not None:
        shifted, k = shift_rows(img, args.shift_k, direction=+1), args.shift_k
    else:
        spec = ShiftSpec(direction=+1, max_rows=args.max_rows, rng=RngStream(seed, "shift"))
        shifted, k = shift(img, spec)
    shift_path = os.path.join(args.out_dir, f"{stem}_shift_k{k}.png")
    save_image(shift_path, shifted)
    if args.jpeg_p is not None:
        decayed, p = jpeg_compress(img, args.jpeg_p), args.jpeg_p
    else:
        spec = JpegSpec(quality_range=(args.quality_lo, args.quality_hi), rng=RngStream(seed, "jpeg"))
        decayed, p = jpeg_decay(img, spec)
    jpeg_path = os.path.join(args.out_dir, f"{stem}_jpeg_p{p:.2f}.png")
    save_image(jpeg_path, decayed)
    print(f"previews written: {shift_path}, {jpeg_path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ppdn",
        description="Push-pull self-supervised denoising: train, denoise, evaluate, verify.",
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed (default: time-derived, printed)")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel workers where supported")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the push-pull training loop")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--data", required=True, help="directory of clean training PNGs")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--telemetry", default=None, help="telemetry CSV path (default <out>.telemetry.csv)")
    p.add_argument("--resume", default=None, help="resume from a .state.npz file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise one PNG with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--two-pass", action="store_true", help="apply the network twice")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="evaluate a model over a testset directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--family", choices=(GAUSSIAN, POISSON), default=GAUSSIAN)
    p.add_argument("--sigma", type=float, default=25.0, help="gaussian sigma in 0..255 units")
    p.add_argument("--lambda-range", default="5,50", help="poisson lambda range lo,hi")
    p.add_argument("--out-prefix", default=None, help="report path prefix (default <model>.eval)")
    p.add_argument("--two-pass", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-theory", help="Monte-Carlo decomposition checks")
    p.add_argument(
        "--method",
        choices=("n2n", "nr2n", "r2r", "constant-reduction", "all"),
        default="all",
    )
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--trials", type=int, default=100, help="constant-reduction trials")
    p.add_argument("--sigma1", type=float, default=50.0, help="input noise sigma (0..255)")
    p.add_argument("--sigma2", type=float, default=25.0, help="target noise sigma (0..255)")
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--corpus-size", type=int, default=64)
    p.add_argument("--out", default=None, help="write the JSON report here too")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("degrade-preview", help="apply the degraders to a PNG for inspection")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--shift-k", type=int, default=None, help="fixed shift rows (default: random)")
    p.add_argument("--max-rows", type=int, default=5)
    p.add_argument("--jpeg-p", type=float, default=None, help="fixed quality fraction (default: random)")
    p.add_argument("--quality-lo", type=float, default=0.8)
    p.add_argument("--quality-hi", type=float, default=1.0)
    p.set_defaults(func=cmd_degrade_preview)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointFormatError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECKPOINT
    except DivergedLossError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DIVERGED
    except EmptyDatasetError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATASET
    except PpdnError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
