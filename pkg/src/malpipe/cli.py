"""Command-line entry point: ``malpipe <command> [options]``.

Exit status: 0 success, 2 configuration, 3 data, 4 numeric/training,
5 I/O.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import config as config_mod
from . import pipeline
from ._accel import backend
from .errors import ConfigError, MalpipeError

# subcommand -> last pipeline stage it runs
STAGE_COMMANDS = {
    "synth": "ingest",
    "preprocess": "preprocess",
    "train-mlp": "mlp",
    "extract": "extract",
    "train-lda": "lda",
    "train-svm": "svm",
    "hpo": "svm",
    "pipeline": "persist",
}


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="malpipe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, stage in STAGE_COMMANDS.items():
        p = sub.add_parser(name, help=f"run the pipeline through the {stage} stage")
        p.add_argument("--config", required=True, help="TOML pipeline configuration")
        p.add_argument("--seed", type=_seed, help="override the configured seed")
        p.add_argument("--out", help="output directory (overrides the configured one)")

    p = sub.add_parser("classify", help="label a feature table with a stored bundle")
    p.add_argument("bundle")
    p.add_argument("input")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--output", help="explicit output file (default <out>/predictions.csv)")

    p = sub.add_parser("evaluate", help="score a stored bundle on a labelled table")
    p.add_argument("bundle")
    p.add_argument("input")
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("explain", help="Shapley attributions of the SVM margin")
    p.add_argument("bundle")
    p.add_argument("input")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--instances", type=int, default=200)
    return parser


def _stage_command(args):
    cfg = config_mod.load(args.config, seed=args.seed, out=args.out)
    if args.command == "synth" and cfg.data.synthetic is None:
        raise ConfigError("synth needs a [data.synthetic] section")
    if args.command == "hpo" and not (cfg.hpo.mlp or cfg.hpo.svm):
        cfg.hpo = dataclasses.replace(cfg.hpo, mlp=True, svm=True)
    result = pipeline.run_pipeline(cfg, STAGE_COMMANDS[args.command])
    for tag, report in result.reports.items():
        if tag in ("mlp", "svm"):
            print(f"{tag} accuracy: {report.scores['accuracy']:.4f}")
    for path in result.files:
        print(path)


def run(args):
    if args.command in STAGE_COMMANDS:
        _stage_command(args)
    elif args.command == "classify":
        output = args.output or os.path.join(args.out, "predictions.csv")
        if args.output is None:
            os.makedirs(args.out, exist_ok=True)
        labels, _, unseen = pipeline.classify(args.bundle, args.input, output)
        print(f"{len(labels)} rows classified -> {output}")
        if unseen:
            print(f"warning: {unseen} unseen categorical values", file=sys.stderr)
    elif args.command == "evaluate":
        reports, files = pipeline.evaluate_bundle(args.bundle, args.input, args.out)
        for tag, report in reports.items():
            print(f"{tag} accuracy: {report.scores['accuracy']:.4f}")
        for path in files:
            print(path)
    elif args.command == "explain":
        if args.instances < 1:
            raise ConfigError("--instances must be >= 1")
        _, files = pipeline.explain_bundle(args.bundle, args.input, args.out, args.instances, args.seed)
        for path in files:
            print(path)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger(__name__).info("kernel backend: %s", backend())
    try:
        run(args)
    except MalpipeError as exc:
        print(f"malpipe: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
