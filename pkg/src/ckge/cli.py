"""Command-line entry point: ``ckge sample | train | report | synth``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import RunConfig
from .experiment import run_grid, write_report
from .kg import load_graph, write_splits
from .sampler import sample_sessions, write_sessions
from .synthetic import random_graph, typed_graph
from .utils import ConfigError, DataError, NumericalError

logger = logging.getLogger("ckge")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ckge", description="Continual knowledge-graph embedding experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="split a graph's training triples into learning sessions")
    s.add_argument("--dataset", required=True, help="directory with entity2id/relation2id/train/valid/test tsv")
    s.add_argument("--sessions", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--filter-mode", default="cumulative", choices=("cumulative", "session"))
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="run the (method x seed) grid")
    t.add_argument("--config", help="key = value file; flags override it")
    t.add_argument("--dataset")
    t.add_argument("--sessions", type=int)
    seeds = t.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int)
    seeds.add_argument("--seeds", type=_list)
    methods = t.add_mutually_exclusive_group()
    methods.add_argument("--method")
    methods.add_argument("--methods", type=_list)
    t.add_argument("--model", choices=("transe", "analogy"))
    t.add_argument("--scenario")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")

    r = sub.add_parser("report", help="aggregate finished runs into report.json / report.tsv")
    r.add_argument("runs", nargs="+", help="run directories or their parent")
    r.add_argument("--out", required=True)

    g = sub.add_parser("synth", help="write a synthetic graph in the dataset layout")
    g.add_argument("--kind", choices=("typed", "random"), default="typed")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("dataset", "sessions", "model", "scenario", "epochs", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    elif args.seeds is not None:
        overrides["seeds"] = [int(x) for x in args.seeds]
    if args.method is not None:
        overrides["methods"] = args.method
    elif args.methods is not None:
        overrides["methods"] = ",".join(args.methods)
    cfg.update(overrides)
    extra = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        extra[key.strip()] = value.strip()
    cfg.update(extra)
    if not cfg.dataset:
        raise ConfigError("no dataset given")
    cfg.validate()
    return cfg


def cmd_sample(args) -> None:
    splits = load_graph(args.dataset)
    sessions = sample_sessions(splits, args.sessions, args.seed, args.filter_mode)
    stats = write_sessions(sessions, splits, args.out, seed=args.seed, filter_mode=args.filter_mode)
    print(stats.to_tsv(), end="")


def cmd_train(args) -> None:
    cfg = config_from_args(args)
    for rdir in run_grid(cfg):
        print(rdir)


def cmd_report(args) -> None:
    report = write_report(args.runs, args.out)
    print(f"{len(report['groups'])} groups written to {args.out}")


def cmd_synth(args) -> None:
    g = typed_graph(seed=args.seed) if args.kind == "typed" else random_graph(seed=args.seed)
    write_splits(g, args.out)
    print(f"{g.vocab.num_entities} entities, {g.vocab.num_relations} relations, "
          f"{len(g.train)}/{len(g.valid)}/{len(g.test)} triples")


COMMANDS = {"sample": cmd_sample, "train": cmd_train, "report": cmd_report, "synth": cmd_synth}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
