"""Compare the level span required by an app's calls with its declared SDK versions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .apidb import SENTINEL, MethodRef, effective_span
from .manifest import Dsdk

COMPATIBILITY = "compatibility"
OBSOLETE_TARGET = "obsolete_target"
SECURITY = "security"

SEVERITY_7_0 = "crashes on 7.0+"
SEVERITY_6_0 = "crashes on 6.0+"
SEVERITY_PRE_6_0 = "pre-6.0 only"


@dataclass(frozen=True)
class LevelSpan:
    minLevel: int = 1
    maxLevel: int = SENTINEL
    witnesses_min: tuple = ()
    witnesses_max: tuple = ()

    @property
    def contradictory(self) -> bool:
        return self.minLevel > self.maxLevel


@dataclass(frozen=True)
class Finding:
    kind: str
    api: Optional[MethodRef] = None
    since: Optional[int] = None
    crash_range: Optional[tuple] = None  # [min, since)
    threshold: Optional[int] = None
    max_level: Optional[int] = None
    recommend: Optional[str] = None
    origin: Optional[str] = None
    library_class: Optional[str] = None
    rule_id: Optional[str] = None
    severity: Optional[str] = None
    sites: int = 0
    location: Optional[str] = None

    def sort_key(self):
        return (self.kind, str(self.api or ""), self.since or 0, self.origin or "",
                self.library_class or "", self.location or "")


@dataclass
class CompatibilityResult:
    findings: list = field(default_factory=list)
    minOverNum: int = 0
    raw_site_count: int = 0


def compute_levels(calls) -> LevelSpan:
    """Fold valid call sites into (max since, min removal)."""
    lo, hi = 1, SENTINEL
    spans = [(c, effective_span(c.lifecycle, SENTINEL)) for c in calls]
    for _, (since, removed) in spans:
        lo = max(lo, since)
        hi = min(hi, removed)
    wmin = tuple(c for c, (s, _) in spans if s == lo) if spans else ()
    wmax = tuple(c for c, (_, r) in spans if r == hi) if hi != SENTINEL else ()
    return LevelSpan(lo, hi, wmin, wmax)


def severity_for(since: int) -> str:
    if since >= 24:
        return SEVERITY_7_0
    if since >= 23:
        return SEVERITY_6_0
    return SEVERITY_PRE_6_0


def check_compatibility(dsdk: Dsdk, calls) -> CompatibilityResult:
    """One finding per distinct API introduced after the declared minimum."""
    per_ref = {}
    raw = 0
    for call in calls:
        since = call.lifecycle.since
        if since > dsdk.min:
            raw += 1
            per_ref[call.ref] = per_ref.get(call.ref, 0) + 1
    since_of = {c.ref: c.lifecycle.since for c in calls}
    findings = []
    for ref in sorted(per_ref, key=str):
        since = since_of[ref]
        findings.append(Finding(COMPATIBILITY, api=ref, since=since, crash_range=(dsdk.min, since),
                                severity=severity_for(since), sites=per_ref[ref]))
    return CompatibilityResult(findings, len(per_ref), raw)


def check_obsolete_target(dsdk: Dsdk, span: LevelSpan, max_known_level: Optional[int] = None):
    """Target below the highest level the app could declare.

    With no removed API in use the headroom is unbounded; the finding is
    suppressed when the target already equals (or exceeds) the newest known level.
    """
    if not dsdk.target < span.maxLevel:
        return None
    if span.maxLevel == SENTINEL:
        if max_known_level is not None and dsdk.target >= max_known_level:
            return None
        return Finding(OBSOLETE_TARGET, max_level=span.maxLevel, recommend="latest")
    return Finding(OBSOLETE_TARGET, max_level=span.maxLevel, recommend=str(span.maxLevel))


def check_security(dsdk: Dsdk, vuln_calls, rules) -> list:
    thresholds = {r.rule_id: r for r in rules}
    findings = []
    for vc in vuln_calls:
        rule = thresholds.get(vc.rule_id)
        if rule is None:
            raise KeyError(f"vulnerable call references unknown rule {vc.rule_id}")
        if rule.min_safe_target > dsdk.target:
            site = vc.call
            findings.append(Finding(SECURITY, api=rule.ref, threshold=rule.min_safe_target,
                                    origin=vc.origin, library_class=vc.library_class,
                                    rule_id=rule.rule_id, severity=rule.label, sites=1,
                                    location=f"{site.owner_method}@{site.offset}"))
    return findings


def lag_sdk_version(dsdk: Dsdk) -> int:
    return dsdk.target - dsdk.min


def deprecation_notes(calls) -> list:
    """Advisory notes for deprecated-but-present APIs (never findings)."""
    seen = {}
    for c in calls:
        if c.lifecycle.deprecated is not None and c.lifecycle.removed is None:
            seen[c.ref] = c.lifecycle.deprecated
    return [f"{ref} deprecated at level {lvl}" for ref, lvl in sorted(seen.items(), key=lambda t: str(t[0]))]
