"""``pclsr`` command line: train, eval, baseline, degrade, augment-preview, wavelet.

Exit codes: 0 success, 2 configuration/usage error, 3 numeric abort,
4 checkpoint schema mismatch, 5 dataset integrity error, 6 refused overwrite.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint
from .datapipe import (
    bicubic_upscale,
    degrade_directory,
    load_benchmark,
    read_png,
    write_png,
)
from .errors import ConfigError, IntegrityError, NumericAbort, SchemaVersionError
from .metrics import evaluate
from .sampling import draw_negatives, draw_positives
from .spectral import haar_forward

log = logging.getLogger("pclsr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SCHEMA, EXIT_INTEGRITY, EXIT_EXISTS = 0, 2, 3, 4, 5, 6


class UsageError(Exception):
    pass


def _output_dir(path, force):
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_config_file(path):
    from .trainer import TrainConfig

    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: expected a flat JSON object")
    return TrainConfig.from_dict(data)


def cmd_train(args):
    from .trainer import parse_override, train

    if not args.config:
        raise UsageError("train requires --config <file>")
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = load_config_file(args.config)
    overrides = dict(parse_override(o) for o in args.override or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        cfg = cfg.with_overrides(overrides)
    dataset = load_benchmark(args.dataset, cfg.scale, root=args.data_root)

    def progress(rec):
        if rec.step % max(1, args.log_every) == 0:
            log.info("step %d l1=%.5f lcl=%.5f lcld=%.5f total=%.5f", rec.step, rec.l1, rec.lcl, rec.lcld, rec.total)

    train(cfg, dataset, args.out, resume=args.resume, force=args.force, progress=progress)
    return EXIT_OK


def _report(report, out, force):
    out_dir = _output_dir(out, force)
    report.write_csv(out_dir / "report.csv")
    print(report.summary_line())
    return EXIT_OK


def cmd_eval(args):
    from .trainer import load_sr, sr_upscaler

    ckpt = load_checkpoint(args.checkpoint)
    scale = args.scale or ckpt["sr_config"]["scale"]
    if scale != ckpt["sr_config"]["scale"]:
        raise ConfigError(f"checkpoint is x{ckpt['sr_config']['scale']}, asked for x{scale}")
    net = load_sr(args.checkpoint)
    dataset = load_benchmark(args.dataset, scale, root=args.data_root)
    up = sr_upscaler(net)
    if not args.float_output:
        from .datapipe import quantize

        inner = up
        up = lambda lr: quantize(np.clip(inner(lr), 0, 1))  # noqa: E731
    report = evaluate(dataset, up, shave=args.shave, quantized=args.quantize_y)
    return _report(report, args.out, args.force)


def cmd_baseline(args):
    dataset = load_benchmark(args.dataset, args.scale, root=args.data_root)
    quantized = not args.float_output
    report = evaluate(
        dataset, lambda lr: bicubic_upscale(lr, args.scale, quantized), shave=args.shave, quantized=args.quantize_y
    )
    return _report(report, args.out, args.force)


def cmd_degrade(args):
    from .datapipe import resolve_dataset_dir

    base = resolve_dataset_dir(args.dataset, args.data_root)
    out = degrade_directory(base, args.scale, force=args.force)
    print(out)
    return EXIT_OK


def cmd_augment_preview(args):
    out = _output_dir(args.out, args.force)
    rng = np.random.default_rng(args.seed)
    hr = torch.from_numpy(read_png(args.image).transpose(2, 0, 1).copy())
    positives, pspecs = draw_positives(hr, args.k_pos, rng)
    negatives, nspecs = draw_negatives(hr, args.k_neg, rng)
    for i, img in enumerate(positives):
        write_png(out / f"positives_{i}.png", img.numpy().transpose(1, 2, 0))
    for i, img in enumerate(negatives):
        write_png(out / f"negatives_{i}.png", img.numpy().transpose(1, 2, 0))
    manifest = {
        "source": str(args.image),
        "seed": args.seed,
        "positives": [None] + [s.to_dict() for s in pspecs],
        "negatives": [s.to_dict() for s in nspecs],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return EXIT_OK


def cmd_wavelet(args):
    out = _output_dir(args.out, args.force)
    img = read_png(args.image)
    h, w = img.shape[:2]
    img = img[: h - h % 2, : w - w % 2]
    x = torch.from_numpy(img.transpose(2, 0, 1).copy())[None]
    bands = haar_forward(x)
    scaling = {}
    for name, band in zip(("LL", "LH", "HL", "HH"), bands):
        arr = band[0].numpy().transpose(1, 2, 0)
        lo, hi = float(arr.min()), float(arr.max())
        span = hi - lo if hi > lo else 1.0
        write_png(out / f"{name}.png", (arr - lo) / span)
        # value = pixel / 255 * span + offset
        scaling[name] = {"offset": lo, "span": span}
    (out / "scaling.json").write_text(json.dumps({"source": str(args.image), "bands": scaling}, indent=2))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="pclsr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--data-root", default=None, help="dataset root (default: $PCLSR_DATA_ROOT)")
        if out:
            sp.add_argument("--out", required=True)
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    t = sub.add_parser("train")
    t.add_argument("--config")
    t.add_argument("--dataset", required=True, help="benchmark key or directory of HR PNGs")
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--resume")
    t.add_argument("--override", action="append", metavar="KEY=VALUE")
    t.add_argument("--log-every", type=int, default=50)
    common(t)
    t.set_defaults(func=cmd_train)

    def metric_flags(sp):
        sp.add_argument("--shave", type=int, default=None, help="border crop (default: scale)")
        sp.add_argument("--quantize-y", action="store_true", help="round Y to integers before scoring")
        sp.add_argument("--float-output", action="store_true", help="score SR without 8-bit rounding")

    e = sub.add_parser("eval")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--scale", type=int)
    metric_flags(e)
    common(e)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline")
    b.add_argument("--dataset", required=True)
    b.add_argument("--scale", type=int, default=4)
    metric_flags(b)
    common(b)
    b.set_defaults(func=cmd_baseline)

    d = sub.add_parser("degrade")
    d.add_argument("--dataset", required=True)
    d.add_argument("--scale", type=int, default=4)
    common(d, out=False)
    d.set_defaults(func=cmd_degrade)

    a = sub.add_parser("augment-preview")
    a.add_argument("image")
    a.add_argument("--k-pos", type=int, default=4)
    a.add_argument("--k-neg", type=int, default=4)
    a.add_argument("--seed", type=int, default=0)
    common(a)
    a.set_defaults(func=cmd_augment_preview)

    w = sub.add_parser("wavelet")
    w.add_argument("image")
    common(w)
    w.set_defaults(func=cmd_wavelet)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pclsr: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"pclsr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"pclsr: numeric abort: {exc} (batch indices {exc.batch_indices})", file=sys.stderr)
        return EXIT_NUMERIC
    except SchemaVersionError as exc:
        print(f"pclsr: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except IntegrityError as exc:
        print(f"pclsr: integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except FileExistsError as exc:
        print(f"pclsr: {exc}", file=sys.stderr)
        return EXIT_EXISTS


if __name__ == "__main__":
    sys.exit(main())
