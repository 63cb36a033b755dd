"""Command-line entry point: ``attrinf <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 configuration/validation error,
3 runtime error (missing files, failed stages).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import AttrInfError, ConfigError, FormatError
from .experiment import ExperimentConfig, Pipeline, apply_overrides, load_config

EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config (JSON); defaults are used when omitted")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output root (overrides the config)")
    p.add_argument("--iterations", type=int, help="number of resample/retrain rounds")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. --set clustering.k=20 (repeatable)")
    p.add_argument("--full", action="store_true", help="include raw confidence lists in JSON reports")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attrinf", description="Membership and attribute inference experiments on binary data.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (
        ("init-config", "print the fully defaulted config"),
        ("generate", "write the dataset (synthetic or copied from a CSV)"),
        ("label", "k-means label the dataset"),
        ("train", "split, sample and train one model per iteration"),
        ("report", "collate all stage outputs into summary.json"),
        ("run", "run every stage end to end"),
    ):
        _common(sub.add_parser(name, help=help_))

    p = sub.add_parser("attack", help="play an inference game")
    p.add_argument("kind", choices=sorted(Pipeline.ATTACKS))
    _common(p)
    p = sub.add_parser("analyze", help="distance-stratified analyses")
    p.add_argument("kind", choices=sorted(Pipeline.ANALYSES))
    _common(p)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={json.dumps(args.out)}")
    if args.iterations is not None:
        overrides.append(f"attack.iterations={args.iterations}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def dispatch(args) -> object:
    cfg = resolve_config(args)
    if args.command == "init-config":
        return cfg.to_dict()
    pipe = Pipeline(cfg)
    if args.command == "generate":
        return str(pipe.generate())
    if args.command == "label":
        return str(pipe.label())
    if args.command == "train":
        return [str(p) for p in pipe.train()]
    if args.command == "attack":
        return getattr(pipe, Pipeline.ATTACKS[args.kind])()
    if args.command == "analyze":
        fn = getattr(pipe, Pipeline.ANALYSES[args.kind])
        return fn(args.full) if args.kind in ("dist-auc", "synthetic-auc") else fn()
    if args.command == "report":
        return pipe.report()
    if args.command == "run":
        pipe.run_all(args.full)
        return str(pipe.run_dir / "summary.json")
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"{args.command}: missing file: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (AttrInfError, FormatError) as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if isinstance(result, (dict, list)):
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
