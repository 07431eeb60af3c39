"""Command line: ``lookdown run <config> [--seed n] [--out dir] [--replicas n]`` and ``lookdown list``."""
from __future__ import annotations

import argparse
import sys

from lookdown.config import EXPERIMENTS, load_config
from lookdown.errors import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lookdown", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a YAML config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--replicas", type=int, help="override the replica count")
    sub.add_parser("list", help="list experiments and the statements they check")
    return p


def _list() -> int:
    from lookdown.experiments import STATEMENTS
    for name in EXPERIMENTS:
        print(name)
        for s in STATEMENTS[name]:
            print(f"    {s}")
    return EXIT_OK


def _run(args) -> int:
    from lookdown.experiments import run_experiment
    try:
        cfg = load_config(args.config, {"seed": args.seed, "replicas": args.replicas,
                                        "out": args.out})
        outcome = run_experiment(cfg, cfg.out)
    except ConfigError as e:
        print(f"config error:\n{e}", file=sys.stderr)
        return EXIT_CONFIG
    rep = outcome.report
    for c in rep.verdicts:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.check}")
    print(f"{cfg.experiment}: {'pass' if rep.passed else 'FAIL'} (outputs in {cfg.out})")
    return outcome.exit_code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        return _list()
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
