"""Command-line front end: ``run``, ``verify`` and ``compare``.

Exit codes: 0 success, 1 error or usage error, 2 iteration limit reached,
3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import InvalidConfigError
from .experiments import (OUTPUT_ENV, VARIANTS, compare_variants, format_table, load_config,
                          output_directory, run_experiment, table_csv)
from .verification import SCOPES, verify_suite

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFY_FAILED = 3

log = logging.getLogger("nemo_opt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would collide with the
    # iteration-limit code
    def error(self, message):
        raise UsageError(message)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    res = run_experiment(cfg)
    print(res.summary())
    if res.trace.message:
        print(res.trace.message, file=sys.stderr)
    print(f"trace written to {res.trace_path}")
    return res.exit_code


def cmd_verify(args) -> int:
    scope = args.scope
    if not scope or scope not in SCOPES:
        raise UsageError(f"scope must be one of {', '.join(SCOPES)}, got {scope!r}")
    report = verify_suite(scope, seed=args.seed)
    text = report.to_text()
    sys.stdout.write(text)
    if args.output:
        out = Path(args.output)
        _write_text(out / f"verify_{scope}.txt", text)
        _write_text(out / f"verify_{scope}.csv", report.to_csv())
    if not report.passed:
        names = ", ".join(c.name for c in report.failures())
        print(f"failed checks: {names}", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.variants) < 2:
        raise UsageError("compare needs at least two variants")
    cfg = load_config(args.config)
    rows = compare_variants(cfg, args.variants, args.coarse_levels)
    sys.stdout.write(format_table(rows))
    out = output_directory(cfg)
    stem = Path(cfg.trace_name).stem
    _write_text(out / f"{stem}_compare.csv", table_csv(rows))
    _write_text(out / f"{stem}_compare.txt", format_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nemo-opt", description="Multilevel Newton-type optimization experiments.",
                epilog=f"Set {OUTPUT_ENV} to override the output directory of any config.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run one experiment and write its trace CSV")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the theory audits")
    v.add_argument("scope", nargs="?", default="all", help="all | operators | theory")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--output", help="directory for the report CSV and text")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("compare", help="compare solver variants on one problem")
    c.add_argument("config")
    c.add_argument("--variants", nargs="+", required=True, choices=VARIANTS)
    c.add_argument("--coarse-levels", nargs="+", type=int, default=None)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("a command is required (run, verify or compare)")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nemo-opt: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except InvalidConfigError as exc:
        print(f"nemo-opt: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 -- report, don't traceback
        log.debug("unhandled error", exc_info=True)
        print(f"nemo-opt: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
