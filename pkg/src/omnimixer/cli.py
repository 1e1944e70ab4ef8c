"""Command-line entry point: ``omnimixer <subcommand> ...``.

Exit codes: 0 success, 1 usage or verification failure, 2 data or format error.
Set ``OMNIMIXER_DETERMINISTIC=1`` to pin numeric libraries to one thread so
repeated runs are bitwise identical; ``OMNIMIXER_FLOAT64=1`` switches tensors
to 64-bit.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import Config, apply_override
from .errors import (CheckpointError, ConfigError, DataError, LabelError, NonFiniteLossError,
                     OmnimixerError)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def deterministic_mode() -> None:
    """Limit BLAS/OpenMP pools to one thread when OMNIMIXER_DETERMINISTIC is set."""
    if os.environ.get("OMNIMIXER_DETERMINISTIC", "0") in ("", "0"):
        return
    from threadpoolctl import threadpool_limits

    threadpool_limits(1)


def load_config(path: str | None, overrides: list[str]) -> Config:
    cfg = Config.load(path) if path else Config()
    for item in overrides or []:
        apply_override(cfg, item)
    return cfg.validate()


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (keys mirror the model/train sections)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config entry, e.g. train.batch_size=4; repeatable")


def resolve_label(value: str | None, cfg: Config) -> int:
    n = cfg.model.num_classes
    valid = f"valid range 0..{n - 1}"
    if value is None:
        raise UsageError(f"a scene label is required ({valid})")
    if value.lstrip("-").isdigit():
        label = int(value)
    elif value in cfg.model.class_names:
        label = cfg.model.class_names.index(value)
    else:
        raise UsageError(f"unknown scene label {value!r} ({valid})")
    if not 0 <= label < n:
        raise UsageError(f"scene label {label} out of range ({valid})")
    return label


# --- subcommands ------------------------------------------------------------


def cmd_train(args) -> int:
    from .data import scan_dataset
    from .train import fit

    cfg = load_config(args.config, args.overrides)
    entries, names = scan_dataset(args.data, cfg.model.class_names or None)
    if not cfg.model.class_names and len(names) == cfg.model.num_classes:
        cfg.model.class_names = names
    trainer = fit(cfg, entries, out_dir=args.out, resume=args.resume, iterations=args.iterations)
    print(f"trained to iteration {trainer.iteration}; checkpoint {Path(args.out) / 'final.omx'}")
    return EXIT_OK


def _snapshot_canvas(path: str, cfg: Config) -> np.ndarray:
    from .data import snapshot_pose
    from .geometry import embed_snapshot, read_png

    m = cfg.model
    snap = read_png(path, size=(m.snapshot_size, m.snapshot_size))
    canvas, _ = embed_snapshot(snap, snapshot_pose(m.snapshot_fov), m.image_height)
    return canvas


def cmd_generate(args) -> int:
    from .geometry import eval_view_names, eval_views, write_png
    from .train import load_generator

    gen, cfg = load_generator(args.checkpoint)
    label = resolve_label(args.label, cfg)
    canvas = _snapshot_canvas(args.input, cfg)
    rng = np.random.default_rng(args.seed)
    with T.no_grad():
        out = gen(T.Tensor(canvas[None]), gen.sample_latent(1, rng), [label]).data[0]
    write_png(args.out, out)
    if args.views:
        m = cfg.model
        for name, view in zip(eval_view_names(), eval_views(out, m.view_size, m.view_size, m.view_fov)):
            write_png(Path(args.views) / f"{name}.png", view)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    from .data import snapshot_pose
    from .geometry import embed_snapshot, read_png, write_png

    snap = read_png(args.input, size=(args.size, args.size) if args.size else None)
    canvas, mask = embed_snapshot(snap, snapshot_pose(args.fov), args.height)
    write_png(args.out, canvas)
    if args.mask:
        write_png(args.mask, mask * 2.0 - 1.0)
    return EXIT_OK


def cmd_extract_views(args) -> int:
    from .geometry import eval_view_names, eval_views, read_png, write_png

    pano = read_png(args.input)
    if pano.shape[2] != 2 * pano.shape[1]:
        raise DataError(f"{args.input}: equirectangular image must be 2:1, got {pano.shape[2]}x{pano.shape[1]}")
    for name, view in zip(eval_view_names(), eval_views(pano, args.size, args.size, args.fov)):
        write_png(Path(args.out) / f"{name}.png", view)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .cost import cost_report

    cfg = load_config(args.config, args.overrides)
    sys.stdout.write(cost_report(cfg))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcheck import SUITES, run_suites

    only = args.only or None
    if only:
        unknown = [n for n in only if n not in SUITES]
        if unknown:
            raise UsageError(f"unknown suite {unknown[0]!r}; choose from {', '.join(SUITES)}")
    results = run_suites(only, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}")
        return EXIT_USAGE
    print(f"all {len(results)} gradient suites passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="omnimixer", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train generator and discriminator")
    p.add_argument("--data", required=True, help="dataset root (class subdirectories or manifest.csv)")
    p.add_argument("--out", required=True, help="run directory for metrics, samples and checkpoints")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--iterations", type=int, help="stop at this iteration (default: config value)")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="complete a snapshot into an equirectangular image")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint (.omx)")
    p.add_argument("--input", required=True, help="snapshot PNG (resized to the configured snapshot size)")
    p.add_argument("--label", help="scene label id or class name")
    p.add_argument("--seed", type=int, default=0, help="latent noise seed")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--views", help="also write the 50 evaluation views into this directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("embed", help="paste a snapshot into an empty equirectangular canvas")
    p.add_argument("--input", required=True, help="snapshot PNG")
    p.add_argument("--out", required=True, help="output canvas PNG")
    p.add_argument("--mask", help="optional mask PNG (white = observed)")
    p.add_argument("--height", type=int, default=64, help="canvas height; width is twice this")
    p.add_argument("--fov", type=float, default=90.0, help="snapshot field of view in degrees")
    p.add_argument("--size", type=int, help="resize the snapshot to SIZE x SIZE first")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract-views", help="render the 50 evaluation views of a panorama")
    p.add_argument("--input", required=True, help="equirectangular PNG")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=64, help="view edge length in pixels")
    p.add_argument("--fov", type=float, default=90.0, help="view field of view in degrees")
    p.set_defaults(func=cmd_extract_views)

    p = sub.add_parser("analyze", help="parameter, MAC and activation-memory report")
    _add_config_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("grad-check", help="run the finite-difference gradient suites")
    p.add_argument("--only", action="append", metavar="SUITE", help="run only this suite; repeatable")
    p.add_argument("--seed", type=int, default=0, help="seed for the random test problems")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    deterministic_mode()
    try:
        return args.func(args)
    except (UsageError, LabelError, ConfigError) as exc:
        print(f"omnimixer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError, json.JSONDecodeError) as exc:
        print(f"omnimixer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"omnimixer {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OmnimixerError as exc:
        print(f"omnimixer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
