"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime abort, 3 sweep cells failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path

from .env import format_corpus, prepare_corpus
from .errors import ConfigError, DatasetError, GlbSimError, RunAbort
from .runner import (
    ALGORITHMS,
    SCHEDULED,
    TRIGGERED,
    SweepSpec,
    atomic_write,
    load_config,
    logspace,
    run_single,
    run_sweep,
    write_results,
    write_sweep,
)

EXIT_OK, EXIT_INVALID, EXIT_ABORT, EXIT_CELLS = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glbsim", description="Federated GLB bandit simulator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="execute one configured run")
    run.add_argument("--config", type=Path)
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--out", type=Path, default=Path("results"))

    sw = sub.add_parser("sweep", help="sweep D or B over seeds")
    sw.add_argument("--config", type=Path)
    sw.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    sw.add_argument("--param", choices=("D", "B"), required=True)
    grid = sw.add_mutually_exclusive_group(required=True)
    grid.add_argument("--logspace", nargs=3, metavar=("LO", "HI", "COUNT"))
    grid.add_argument("--values")
    sw.add_argument("--algo")
    sw.add_argument("--seeds", default="0")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", type=Path, default=Path("results"))

    prep = sub.add_parser("prepare-data", help="raw CSV to prepared corpus")
    prep.add_argument("raw_csv", type=Path)
    prep.add_argument("--label-col", required=True)
    prep.add_argument("--d-base", type=int, required=True)
    prep.add_argument("--seed", type=int, default=0)
    prep.add_argument("--out", type=Path, required=True)

    sub.add_parser("list-algos", help="print algorithm ids")
    return p


def _int_list(text: str, what: str):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated integers") from None
    if not vals:
        raise ConfigError(f"{what}: empty list")
    return vals


def _grid(args):
    if args.logspace:
        try:
            lo, hi, n = float(args.logspace[0]), float(args.logspace[1]), int(args.logspace[2])
        except ValueError:
            raise ConfigError("logspace: expected LO HI COUNT") from None
        return logspace(lo, hi, n)
    try:
        vals = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("values: expected comma-separated numbers") from None
    if not vals:
        raise ConfigError("values: empty list")
    return vals


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    res = run_single(cfg)
    for path in write_results(res, args.out):
        print(path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    overrides = list(args.overrides)
    if args.algo:
        overrides.append(f"algorithm={args.algo}")
    values = _grid(args)
    if args.param == "B":
        values = [int(round(v)) for v in values]
    seeds = _int_list(args.seeds, "seeds")
    # the swept key needs a placeholder so validation of the base passes
    probe = load_config(args.config, overrides + [f"{args.param}={values[0]}"])
    if args.param == "D" and probe.algorithm not in TRIGGERED:
        raise ConfigError(f"param: {probe.algorithm} is not trigger-driven; sweep B instead")
    if args.param == "B" and probe.algorithm not in SCHEDULED:
        raise ConfigError(f"param: {probe.algorithm} is not scheduled; sweep D instead")
    spec = SweepSpec(probe, args.param, values, seeds).validate()
    rows, failures = run_sweep(spec, workers=max(args.workers, 1))
    for path in write_sweep(spec, rows, failures, args.out):
        print(path)
    for f in failures:
        print(f"cell {args.param}={f['value']} seed={f['seed']} failed: {f['error']}", file=sys.stderr)
    return EXIT_CELLS if failures else EXIT_OK


def cmd_prepare_data(args) -> int:
    feats, labels, names = prepare_corpus(args.raw_csv, args.label_col, args.d_base, args.seed)
    atomic_write(args.out, format_corpus(feats, labels, len(names)))
    counts = Counter(int(v) for v in labels)
    for k, name in enumerate(names):
        print(f"class {k} ({name}): {counts[k]}")
    print(args.out)
    return EXIT_OK


def cmd_list_algos(args) -> int:
    for name in sorted(ALGORITHMS):
        knob = "D" if name in TRIGGERED else "B" if name in SCHEDULED else "-"
        print(f"{name}\t{knob}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "prepare-data": cmd_prepare_data,
    "list-algos": cmd_list_algos,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RunAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (GlbSimError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
