"""Command-line entry point: ``transfuse {train,destroy,fuse,eval}``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import TransFuseError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
TRANSFORMS = ("nl", "b", "ns")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _force_list(value):
    names = [v for v in value.replace(",", "+").split("+") if v]
    bad = [n for n in names if n not in TRANSFORMS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"expected '+'-joined transform names from {TRANSFORMS}, got {value!r}"
        )
    return tuple(names)


def build_parser():
    parser = _Parser(prog="transfuse", description="Self-supervised two-stage image fusion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the encoder-decoder by destruction-reconstruction")
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--data", type=Path, required=True, help="directory of training images")
    p.add_argument("--out", type=Path, required=True, help="output directory for checkpoints and logs")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--epochs", type=int, help="number of epochs (overrides config)")
    p.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    p.add_argument("--image-size", type=int, help="square training size (overrides config)")
    p.add_argument("--no-transformer", action="store_true",
                   help="ablation: CNN branch only, no transformer parameters")
    p.add_argument("--disable", action="append", choices=TRANSFORMS, default=[],
                   help="ablation: never apply this transform (repeatable)")

    p = sub.add_parser("destroy", help="destroy random subregions of one image")
    p.add_argument("image", type=Path)
    p.add_argument("out", type=Path, help="output image (.png or .pgm)")
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--disable", action="append", choices=TRANSFORMS, default=[],
                   help="never apply this transform (repeatable)")
    p.add_argument("--force", type=_force_list, metavar="NAMES",
                   help="always apply exactly these transforms, e.g. nl+b+ns")
    p.add_argument("--image-size", type=int, help="resize the input before destroying it")
    p.add_argument("--record", type=Path,
                   help="destruction record path (default: OUT with a .json suffix)")

    p = sub.add_parser("fuse", help="fuse two source images with a trained checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("image_a", type=Path)
    p.add_argument("image_b", type=Path)
    p.add_argument("out", type=Path, help="fused image (.png or .pgm)")
    p.add_argument("--config", type=Path, help="YAML run configuration (fusion section)")
    p.add_argument("--rule", choices=("average", "l1norm"), help="fusion rule")
    p.add_argument("--task", choices=("multimodal", "exposure", "focus"),
                   help="pick the default rule for this task")
    p.add_argument("--radius", type=int, help="l1norm block radius")
    p.add_argument("--resize", action="store_true",
                   help="resize sources to the checkpoint's input size")

    p = sub.add_parser("eval", help="score <id>_a/<id>_b/<id>_fused triples in a directory")
    p.add_argument("dir", type=Path)
    p.add_argument("report", type=Path, help="CSV report path; a Markdown table is written alongside")
    p.add_argument("--config", type=Path, help="YAML run configuration (loss section sets SSIM constants)")
    return parser


def cmd_train(args):
    from .config import load_config, with_overrides
    from .data import scan_dataset
    from .trainer import train

    run = with_overrides(
        load_config(args.config), seed=args.seed, epochs=args.epochs,
        image_size=args.image_size, max_steps=args.max_steps,
        no_transformer=args.no_transformer, disable=tuple(args.disable),
    )
    manifest = scan_dataset(args.data, run.train.image_size)
    for w in manifest.warnings:
        print(f"warning: skipped {w['path']}: {w['error']}", file=sys.stderr)
    result = train(manifest, run.train, args.out)
    last = result.log.records[-1]
    print(f"trained {len(result.log.records)} steps, final loss {last['loss']:.6g}; "
          f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_destroy(args):
    from .config import load_config, with_overrides
    from .data import load_image, preprocess, save_image
    from .destruct import destroy

    run = with_overrides(load_config(args.config), seed=args.seed, disable=tuple(args.disable))
    spec = run.train.transform_spec
    if args.force:
        spec = spec.force(*args.force)
    spec = spec.disable(*run.train.disabled)
    img = load_image(args.image)
    if args.image_size:
        img = preprocess(img, args.image_size)
    out, record = destroy(img, spec, run.train.seed)
    save_image(out, args.out)
    record_path = args.record or args.out.with_suffix(".json")
    payload = {"seed": run.train.seed, "source": str(args.image), **record.to_dict()}
    record_path.write_text(json.dumps(payload, indent=1))
    print(f"wrote {args.out} and {record_path}")
    return EXIT_OK


def cmd_fuse(args):
    from .checkpoint import load_checkpoint
    from .config import load_config
    from .data import load_image, preprocess, save_image
    from .fuse import FusionRule, fuse_images, rule_for_task

    rule = load_config(args.config).fusion
    if args.task:
        rule = FusionRule(rule_for_task(args.task).kind, rule.l1_block_radius)
    if args.rule:
        rule = FusionRule(args.rule, rule.l1_block_radius)
    if args.radius is not None:
        rule = FusionRule(rule.kind, args.radius)
    model = load_checkpoint(args.checkpoint)
    a, b = load_image(args.image_a), load_image(args.image_b)
    if args.resize:
        size = model.cfg.patch.image_size
        a, b = preprocess(a, size), preprocess(b, size)
    save_image(fuse_images(a, b, model, rule), args.out)
    print(f"wrote {args.out} ({rule.kind})")
    return EXIT_OK


def cmd_eval(args):
    from .config import load_config
    from .metrics import evaluate_dir

    report = evaluate_dir(args.dir, load_config(args.config).train.loss_cfg)
    report.to_csv(args.report)
    md = args.report.with_suffix(".md")
    report.to_markdown(md)
    print(report.to_markdown(), end="")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "destroy": cmd_destroy, "fuse": cmd_fuse, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TransFuseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
