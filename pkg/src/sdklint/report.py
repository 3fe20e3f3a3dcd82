"""Per-app vetting pipeline, corpus batches and aggregate statistics."""

from __future__ import annotations

import json
import logging
import os
import statistics
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .apidb import SENTINEL, ApiLevelDb
from .apk import open_apk
from .calls import _Resolver, extract_valid_calls, find_vulnerable_calls, liveness_mask
from .consistency import (COMPATIBILITY, OBSOLETE_TARGET, SECURITY, SEVERITY_6_0, SEVERITY_7_0,
                          SEVERITY_PRE_6_0, LevelSpan, check_compatibility, check_obsolete_target,
                          check_security, compute_levels, deprecation_notes, lag_sdk_version)
from .dex.parser import parse_dex
from .errors import SdkLintError
from .manifest import Dsdk, effective_dsdk, parse_manifest, root_classes

log = logging.getLogger(__name__)

SDK_ATTRIBUTES = ("minSdkVersion", "targetSdkVersion", "maxSdkVersion")
TOP_API_CLASSES = 20


@dataclass
class VetOptions:
    all_live: bool = False  # disable library exclusion (diagnostics, oracle checks)
    keep_sites: bool = False  # retain call-site objects on the report


@dataclass
class AppReport:
    apk: str
    package: Optional[str] = None
    apk_bytes: int = 0
    dex_bytes: int = 0
    dex_files: int = 0
    class_count: int = 0
    dsdk: Optional[Dsdk] = None
    defined: dict = field(default_factory=dict)
    span: Optional[LevelSpan] = None
    findings: list = field(default_factory=list)
    minOverNum: Optional[int] = None
    raw_over_num: Optional[int] = None
    lag: Optional[int] = None
    vuln_calls: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    elapsed: float = 0.0
    error: Optional[tuple] = None  # (stage, message)
    sites: Optional[list] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def findings_of(self, kind):
        return [f for f in self.findings if f.kind == kind]

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "apk": self.apk,
            "package": self.package,
            "sizes": {"apkBytes": self.apk_bytes, "dexBytes": self.dex_bytes, "dexFiles": self.dex_files,
                      "classes": self.class_count},
            "dsdk": None,
            "span": None,
            "findings": [finding_to_dict(f) for f in self.findings],
            "minOverNum": self.minOverNum,
            "rawOverNum": self.raw_over_num,
            "lagSdkVersion": self.lag,
            "vulnerableCalls": [
                {"rule": v.rule_id, "origin": v.origin, "libraryClass": v.library_class,
                 "location": f"{v.call.owner_method}@{v.call.offset}", "live": v.call.live}
                for v in self.vuln_calls
            ],
            "notes": list(self.notes),
            "warnings": list(self.warnings),
            "error": None if self.error is None else {"stage": self.error[0], "message": self.error[1]},
        }
        if self.dsdk is not None:
            d["dsdk"] = {
                "min": self.dsdk.min, "target": self.dsdk.target, "max": self.dsdk.max,
                "defaulted": {"min": self.dsdk.min_defaulted, "target": self.dsdk.target_defaulted},
                "defined": dict(self.defined),
                "outlier": self.dsdk.outlier,
                "rawMin": list(self.dsdk.raw_min),
            }
        if self.span is not None:
            d["span"] = {"minLevel": self.span.minLevel, "maxLevel": self.span.maxLevel,
                         "contradictory": self.span.contradictory}
        if timing:
            d["elapsedSeconds"] = self.elapsed
        return d


def finding_to_dict(f) -> dict:
    d = {"kind": f.kind, "api": str(f.api) if f.api is not None else None, "since": f.since,
         "origin": f.origin}
    if f.kind == COMPATIBILITY:
        d["crashRange"] = list(f.crash_range)
        d["severity"] = f.severity
        d["sites"] = f.sites
    elif f.kind == SECURITY:
        d["threshold"] = f.threshold
        d["libraryClass"] = f.library_class
        d["rule"] = f.rule_id
        d["label"] = f.severity
        d["location"] = f.location
    elif f.kind == OBSOLETE_TARGET:
        d["maxLevel"] = f.max_level
        d["recommend"] = f.recommend
    return d


def _stage_of(exc) -> str:
    return exc.stage if isinstance(exc, SdkLintError) else "internal"


def vet_one(path, db: ApiLevelDb, rules, options: Optional[VetOptions] = None) -> AppReport:
    """Run container, manifest, dex, extraction and consistency on one APK.

    Errors never propagate: they become ``report.error`` with the failing stage.
    """
    options = options or VetOptions()
    t0 = time.perf_counter()
    report = AppReport(apk=os.fspath(path))
    try:
        _vet(report, path, db, rules, options)
    except Exception as exc:  # noqa: BLE001 - isolation contract
        if not isinstance(exc, SdkLintError):
            log.exception("internal error while vetting %s", path)
        report.error = (_stage_of(exc), str(exc))
    report.elapsed = max(time.perf_counter() - t0, 1e-9)
    return report


def _vet(report, path, db, rules, options):
    contents = open_apk(path)
    report.apk_bytes = contents.apk_bytes
    report.dex_bytes = contents.total_dex_bytes
    report.dex_files = len(contents.dex_entries)
    report.warnings.extend(contents.warnings)

    info = parse_manifest(contents.manifest)
    report.package = info.package_name
    report.warnings.extend(info.warnings)
    dsdk = effective_dsdk(info, db.max_known_level)
    report.dsdk = dsdk
    report.defined = dict(info.defined)
    if len(dsdk.raw_min) > 1:
        report.warnings.append(f"multiple minSdkVersion values {list(dsdk.raw_min)}; first one used")
    if dsdk.max is not None:
        report.notes.append("maxSdkVersion is declared; the platform has ignored it since Android 2.1")

    images = []
    for name, blob in contents.dex_entries:
        image = parse_dex(blob, name)
        report.warnings.extend(f"{name}: {w}" for w in image.warnings)
        images.append(image)
    report.class_count = sum(len(i.class_defs) for i in images)

    if options.all_live:
        mask = {c.descriptor: True for i in images for c in i.class_defs}
    else:
        mask = liveness_mask(images, root_classes(info), info.package_name)
    resolver = _Resolver(images, db)
    sites = extract_valid_calls(images, mask, db, resolver)
    valid = [s for s in sites if s.valid]
    for s in sites:
        if s.guarded_by is not None and not s.guarded_by.sane:
            report.warnings.append(
                f"SDK_INT compared with implausible level {s.guarded_by.threshold} in {s.owner_method}")
    span = compute_levels(valid)
    # witness lists can be long; keep them only when sites are requested
    report.span = span if options.keep_sites else LevelSpan(span.minLevel, span.maxLevel)
    if span.contradictory:
        report.warnings.append(
            f"contradictory level span: calls need level {span.minLevel} but use APIs removed at {span.maxLevel}")

    compat = check_compatibility(dsdk, valid)
    findings = list(compat.findings)
    obsolete = check_obsolete_target(dsdk, span, db.max_known_level)
    if obsolete is not None:
        findings.append(obsolete)
    vuln = find_vulnerable_calls(images, mask, rules, info.package_name, db, resolver)
    findings.extend(check_security(dsdk, vuln, rules))
    report.findings = sorted(findings, key=lambda f: f.sort_key())
    report.minOverNum = compat.minOverNum
    report.raw_over_num = compat.raw_site_count
    report.lag = lag_sdk_version(dsdk)
    report.vuln_calls = vuln
    report.notes.extend(deprecation_notes(valid))
    if options.keep_sites:
        report.sites = sites


# -- corpus ---------------------------------------------------------------

def collect_inputs(spec: str) -> list:
    """APK paths from a directory (recursive ``*.apk``) or an ``@listfile``."""
    if spec.startswith("@"):
        with open(spec[1:], encoding="utf-8") as fh:
            paths = [line.strip() for line in fh if line.strip() and not line.lstrip().startswith("#")]
    elif os.path.isdir(spec):
        paths = []
        for dirpath, _dirs, files in os.walk(spec):
            paths.extend(os.path.join(dirpath, f) for f in files if f.lower().endswith(".apk"))
    else:
        paths = [spec]
    return sorted(paths)


_WORKER = {}


def _init_worker(db, rules, options):
    _WORKER["args"] = (db, rules, options)


def _work(path):
    db, rules, options = _WORKER["args"]
    return vet_one(path, db, rules, options)


def vet_corpus(paths, db: ApiLevelDb, rules, jobs: int = 1, options: Optional[VetOptions] = None,
               on_report: Optional[Callable] = None):
    """Vet every APK; returns (reports sorted by path, CorpusStats).

    ``on_report`` sees each report as soon as it completes (completion order).
    """
    options = options or VetOptions()
    paths = sorted(os.fspath(p) for p in paths)
    reports = []
    if jobs <= 1 or len(paths) <= 1:
        for p in paths:
            r = vet_one(p, db, rules, options)
            reports.append(r)
            if on_report:
                on_report(r)
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(db, rules, options)) as pool:
            for r in pool.map(_work, paths, chunksize=1):
                reports.append(r)
                if on_report:
                    on_report(r)
    reports.sort(key=lambda r: r.apk)
    return reports, corpus_stats([r.to_dict(timing=False) for r in reports])


def _cdf(values) -> list:
    values = sorted(values)
    n = len(values)
    if not n:
        return []
    counts = Counter(values)
    points, acc = [], 0
    for x in sorted(counts):
        acc += counts[x]
        points.append([x, round(acc / n, 6)])
    return points


def _hist(values) -> dict:
    counts = Counter(values)
    # string keys keep JSON round trips stable
    return {str(k): counts[k] for k in sorted(counts, key=lambda k: (isinstance(k, str), k))}


def _worst_severity(findings):
    sev = {f["severity"] for f in findings if f["kind"] == COMPATIBILITY}
    for s in (SEVERITY_7_0, SEVERITY_6_0, SEVERITY_PRE_6_0):
        if s in sev:
            return s
    return "none"


def _api_class(api: str) -> str:
    cls = api.split("->", 1)[0]
    dotted = cls[1:-1].replace("/", ".")
    return dotted[len("android."):] if dotted.startswith("android.") else dotted


def corpus_stats(report_dicts) -> dict:
    """Aggregate statistics over per-app report dictionaries (order independent)."""
    reports = sorted(report_dicts, key=lambda d: d["apk"])
    ok = [d for d in reports if d["error"] is None]
    failed = Counter(d["error"]["stage"] for d in reports if d["error"] is not None)

    non_defined = {a: sum(1 for d in ok if not d["dsdk"]["defined"].get(a)) for a in SDK_ATTRIBUTES}
    outliers = _hist(d["dsdk"]["outlier"] or "none" for d in ok)
    lags = [d["lagSdkVersion"] for d in ok]
    kept_lags = [x for x in lags if x >= 0]

    def has(d, kind):
        return any(f["kind"] == kind for f in d["findings"])

    compat_apps = [d for d in ok if has(d, COMPATIBILITY)]
    min_level_hist = _hist(d["span"]["minLevel"] if has(d, COMPATIBILITY) else "none" for d in ok)
    class_apps = Counter()
    for d in compat_apps:
        for cls in {_api_class(f["api"]) for f in d["findings"] if f["kind"] == COMPATIBILITY}:
            class_apps[cls] += 1
    top_classes = sorted(class_apps.items(), key=lambda t: (-t[1], t[0]))[:TOP_API_CLASSES]

    vuln_apps = [d for d in ok if has(d, SECURITY)]
    lib_apps = Counter()
    only_third_party = 0
    for d in vuln_apps:
        sec = [f for f in d["findings"] if f["kind"] == SECURITY]
        for lib in {f["libraryClass"] for f in sec if f["origin"] == "third_party"}:
            lib_apps[lib] += 1
        if all(f["origin"] == "third_party" for f in sec):
            only_third_party += 1
    libraries = sorted(lib_apps.items(), key=lambda t: (-t[1], t[0]))

    return {
        "apps": len(ok),
        "failed": dict(sorted(failed.items())),
        "nonDefined": non_defined,
        "outliers": outliers,
        "minSdkDistribution": _hist(d["dsdk"]["min"] for d in ok),
        "targetSdkDistribution": _hist(d["dsdk"]["target"] for d in ok),
        "lagSdkVersionCdf": _cdf(kept_lags),
        "lagSdkVersionExcluded": len(lags) - len(kept_lags),
        "lagSdkVersionMedian": statistics.median(kept_lags) if kept_lags else None,
        "minOverNumCdf": _cdf(d["minOverNum"] for d in ok),
        "minLevelHistogram": min_level_hist,
        "crashSeverity": _hist(_worst_severity(d["findings"]) for d in ok),
        "compatibilityApps": len(compat_apps),
        "obsoleteTargetApps": sum(1 for d in ok if has(d, OBSOLETE_TARGET)),
        "topApiClasses": [[c, n] for c, n in top_classes],
        "ruleCallApps": sum(1 for d in ok if d["vulnerableCalls"]),
        "securityApps": len(vuln_apps),
        "securityAppsOnlyThirdParty": only_third_party,
        "vulnerableLibraries": [[c, n] for c, n in libraries],
        "maxLevelSentinel": SENTINEL,
    }


def timing_stats(reports) -> dict:
    """Wall-clock data (kept apart from the deterministic statistics)."""
    ok = sorted((r for r in reports if r.ok), key=lambda r: r.apk)
    times = [r.elapsed for r in ok]
    return {
        "elapsedCdf": _cdf(round(t, 4) for t in times),
        "meanSeconds": statistics.fmean(times) if times else None,
        "medianSeconds": statistics.median(times) if times else None,
        "dexBytesVsSeconds": [[r.dex_bytes, r.elapsed] for r in ok],
        "perApp": {r.apk: r.elapsed for r in sorted(reports, key=lambda r: r.apk)},
    }


def dumps_line(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def dumps_doc(d: dict) -> str:
    return json.dumps(d, sort_keys=True, indent=2) + "\n"


def summary_text(report: AppReport) -> str:
    if report.error is not None:
        return f"{report.apk}: error in {report.error[0]}: {report.error[1]}"
    d = report.dsdk
    lines = [f"{report.apk} ({report.package}): min={d.min} target={d.target} max={d.max} "
             f"minLevel={report.span.minLevel} maxLevel={report.span.maxLevel} "
             f"({report.elapsed:.2f}s)"]
    for f in report.findings:
        if f.kind == COMPATIBILITY:
            lines.append(f"  compatibility: {f.api} since {f.since}, crashes on levels "
                         f"[{f.crash_range[0]}, {f.crash_range[1]}) ({f.severity})")
        elif f.kind == SECURITY:
            where = "app code" if f.origin == "app_own" else f"library {f.library_class}"
            lines.append(f"  security: {f.api} with targetSdkVersion {d.target} < {f.threshold} in {where}")
        else:
            lines.append(f"  obsolete target: {d.target} could be raised to {f.recommend}")
    if not report.findings:
        lines.append("  no findings")
    for w in report.warnings:
        lines.append(f"  warning: {w}")
    return "\n".join(lines)
