"""Command line: ``souproc run|report|list-scenarios|calibrate``.

Exit codes: 0 success or pass, 1 gating rule failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .model import ConfigError

THREADS_ENV = "SOUPROC_THREADS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="souproc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    run = sub.add_parser("run", help="execute a scenario from a config file or built-in name")
    run.add_argument("config", help="path to a TOML config, or a built-in scenario name")
    run.add_argument("--seed", type=int, default=None, help="override the seed base")
    run.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    run.add_argument("--out", default=None, help="output directory (default: output.dir)")
    run.add_argument("--replicates", type=int, default=None, help="override the replicate count")
    rep = sub.add_parser("report", help="re-evaluate verdicts from saved outputs")
    rep.add_argument("dir")
    sub.add_parser("list-scenarios", help="print built-in scenario names")
    cal = sub.add_parser("calibrate", help="rerun a threshold calibration")
    cal.add_argument("name")
    cal.add_argument("--threads", type=int, default=1)
    return p


def _resolve_threads(flag: Optional[int]):
    if flag is not None:
        return max(1, flag), "flag"
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env)), f"env:{THREADS_ENV}"
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1, "default"


def _load(config: str):
    from .io import builtin_config, builtin_names, parse_config
    if not Path(config).exists() and config in builtin_names():
        return builtin_config(config)
    return parse_config(config)


def _print_verdicts(doc: dict, out=None):
    out = out or sys.stdout
    label = "gating" if doc["gating"] else "diagnostic"
    print(f"scenario {doc['scenario']} ({label}, {doc['replicates']} replicates)", file=out)
    for v in doc["verdicts"]:
        print(f"  {'PASS' if v['passed'] else 'FAIL'}  {v['rule']}  (value {v['value']})", file=out)
    if not doc["verdicts"]:
        print(json.dumps(doc["statistics"], indent=2, sort_keys=True), file=out)


def cmd_run(args) -> int:
    from .experiments import run_scenario
    from .io import write_outputs
    rc = _load(args.config)
    if args.seed is not None:
        rc = rc.with_seed(args.seed)
    if args.replicates is not None:
        rc = replace(rc, replicates=args.replicates)
    threads, source = _resolve_threads(args.threads)
    scn = rc.build()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    result = run_scenario(scn, parallelism=threads)
    out = Path(args.out or rc.output_dir)
    write_outputs(result, rc, out, threads=threads, thread_source=source, started=started)
    from .io import report_document
    doc = report_document(result)
    _print_verdicts(doc)
    print(f"outputs in {out}")
    return 0 if (result.passed or not scn.gating) else 1


def cmd_report(args) -> int:
    from .io import report_from_dir
    chk = report_from_dir(args.dir)
    for name in chk.digest_mismatches:
        print(f"warning: digest mismatch for {name}; outputs were modified after the run",
              file=sys.stderr)
    if chk.verdicts_changed:
        print("warning: re-evaluated verdicts differ from the saved report.json", file=sys.stderr)
    _print_verdicts(chk.document)
    return 0 if (chk.result.passed or not chk.result.scenario.gating) else 1


def cmd_list(args) -> int:
    from .experiments.scenarios import KINDS
    for name, kind in KINDS.items():
        tag = f"criterion {kind.criterion}" if kind.criterion else "diagnostic"
        print(f"{name}\t{tag}\t{kind.description}")
    return 0


def cmd_calibrate(args) -> int:
    from .experiments.calibration import CALIBRATIONS
    if args.name not in CALIBRATIONS:
        print(f"no calibration for {args.name!r}; available: {', '.join(CALIBRATIONS)}", file=sys.stderr)
        return 2
    print(json.dumps(CALIBRATIONS[args.name](args.threads), indent=2, sort_keys=True))
    return 0


COMMANDS = {"run": cmd_run, "report": cmd_report, "list-scenarios": cmd_list, "calibrate": cmd_calibrate}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"souproc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
