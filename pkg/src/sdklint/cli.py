"""``sdklint`` command line: vet one APK, vet a corpus, or summarize the API database."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .apidb import load_api_db, level_histograms
from .errors import SdkLintError
from .report import (VetOptions, collect_inputs, dumps_doc, dumps_line, summary_text,
                     timing_stats, vet_corpus, vet_one)
from .rules import load_rules

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FINDINGS = 2

ENV_API_DB = "SDKLINT_API_DB"

log = logging.getLogger("sdklint")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; 2 is reserved for --fail-on-findings
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _api_db_path(args) -> str:
    path = args.api_db or os.environ.get(ENV_API_DB)
    if not path:
        raise UsageError(f"no API database given: pass --api-db or set {ENV_API_DB}")
    if not os.path.isfile(path):
        raise UsageError(f"API database not found: {path}")
    return path


def _load(args):
    db = load_api_db(_api_db_path(args))
    rules = load_rules(getattr(args, "rules", None))
    return db, rules


def cmd_vet(args) -> int:
    db, rules = _load(args)
    report = vet_one(args.apk, db, rules, VetOptions(all_live=args.all_live))
    if args.json:
        print(dumps_line(report.to_dict()))
        print(summary_text(report), file=sys.stderr)
    else:
        print(summary_text(report))
    if report.error is not None:
        return EXIT_USAGE
    if args.fail_on_findings and report.findings:
        return EXIT_FINDINGS
    return EXIT_OK


def cmd_corpus(args) -> int:
    db, rules = _load(args)
    paths = collect_inputs(args.inputs)
    if not paths:
        raise UsageError(f"no APKs found in {args.inputs}")
    jobs = args.jobs or os.cpu_count() or 1

    def stream(report):
        print(dumps_line(report.to_dict()), flush=True)

    reports, stats = vet_corpus(paths, db, rules, jobs=jobs, on_report=stream)
    timing = timing_stats(reports)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "reports.jsonl"), "w", encoding="utf-8") as fh:
            for r in reports:
                fh.write(dumps_line(r.to_dict(timing=False)) + "\n")
        with open(os.path.join(args.out, "stats.json"), "w", encoding="utf-8") as fh:
            fh.write(dumps_doc(stats))
        with open(os.path.join(args.out, "timing.json"), "w", encoding="utf-8") as fh:
            fh.write(dumps_doc(timing))
    else:
        print(dumps_line({"corpusStats": stats}))
    print(f"{stats['apps']} apps analyzed, {sum(stats['failed'].values())} failed; "
          f"{stats['compatibilityApps']} with compatibility findings, "
          f"{stats['securityApps']} with security findings; "
          f"median {timing['medianSeconds'] or 0:.2f}s per app", file=sys.stderr)
    return EXIT_OK if stats["apps"] > 0 else EXIT_USAGE


def cmd_db_stats(args) -> int:
    db = load_api_db(_api_db_path(args))
    kinds = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
    hist = level_histograms(db, kinds)
    doc = {
        "maxKnownLevel": db.max_known_level,
        "classes": len(db.classes),
        "methods": len(db.methods),
        "fields": len(db.fields),
        "kinds": list(kinds),
        "warnings": dict(db.warnings),
        **hist,
    }
    sys.stdout.write(dumps_doc(doc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sdklint",
        description="Check declared SDK versions of Android APKs against the framework APIs they call.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--api-db", metavar="P", help=f"api-versions.xml (default: ${ENV_API_DB})")
        p.add_argument("--rules", metavar="P", help="vulnerable-API rule file (default: built-in rules)")

    p = sub.add_parser("vet", help="vet a single APK")
    p.add_argument("apk")
    common(p)
    p.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    p.add_argument("--fail-on-findings", action="store_true", help="exit 2 when any finding is reported")
    p.add_argument("--all-live", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_vet)

    p = sub.add_parser("corpus", help="vet every APK in a directory or @list file")
    p.add_argument("inputs", metavar="dir|@list")
    common(p)
    p.add_argument("--jobs", type=int, default=0, metavar="N", help="worker processes (default: CPU count)")
    p.add_argument("--out", metavar="DIR", help="write reports.jsonl, stats.json and timing.json here")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("db-stats", help="added/deprecated/removed API counts per level")
    p.add_argument("--api-db", metavar="P")
    p.add_argument("--kinds", default="method", help="comma list of class,method,field (default: method)")
    p.set_defaults(func=cmd_db_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sdklint: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SdkLintError as exc:
        print(f"sdklint: {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
