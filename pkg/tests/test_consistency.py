import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdklint.apidb import SENTINEL, ApiLifecycle, MethodRef
from sdklint.calls import ApiCallSite, RawCallSite, VulnCallSite
from sdklint.consistency import (COMPATIBILITY, OBSOLETE_TARGET, SECURITY, SEVERITY_6_0, SEVERITY_7_0,
                                 SEVERITY_PRE_6_0, LevelSpan, check_compatibility, check_obsolete_target,
                                 check_security, compute_levels, deprecation_notes, lag_sdk_version,
                                 severity_for)
from sdklint.manifest import Dsdk
from sdklint.rules import default_rules

OWNER = MethodRef("Lcom/a/Main;", "onCreate", "(Landroid/os/Bundle;)V")


def site(name, since, removed=None, deprecated=None, offset=0):
    ref = MethodRef("Landroid/x/Api;", name, "()V")
    return ApiCallSite(ref, ApiLifecycle(since, deprecated, removed), "Lcom/a/Main;", OWNER, offset)


def test_levels_of_no_calls():
    assert compute_levels([]) == LevelSpan(1, SENTINEL)


def test_levels_fold():
    calls = [site("a", 9), site("b", 21), site("c", 1, removed=23), site("d", 21, offset=4)]
    span = compute_levels(calls)
    assert (span.minLevel, span.maxLevel) == (21, 23)
    assert {c.ref.method_name for c in span.witnesses_min} == {"b", "d"}
    assert [c.ref.method_name for c in span.witnesses_max] == ["c"]
    assert not span.contradictory
    assert compute_levels([site("x", 24), site("y", 1, removed=23)]).contradictory


@pytest.mark.parametrize("since,severity", [(26, SEVERITY_7_0), (24, SEVERITY_7_0), (23, SEVERITY_6_0),
                                            (22, SEVERITY_PRE_6_0), (2, SEVERITY_PRE_6_0)])
def test_severity_buckets(since, severity):
    assert severity_for(since) == severity


def test_compatibility_counts_distinct_apis():
    dsdk = Dsdk(19, 28)
    calls = [site("a", 21), site("a", 21, offset=8), site("b", 19), site("c", 23), site("d", 1)]
    result = check_compatibility(dsdk, calls)
    assert result.minOverNum == 2
    assert result.raw_site_count == 3
    assert [(f.api.method_name, f.crash_range, f.sites) for f in result.findings] == \
        [("a", (19, 21), 2), ("c", (19, 23), 1)]
    assert all(f.kind == COMPATIBILITY for f in result.findings)


@pytest.mark.parametrize("target,span,known,expected", [
    (16, LevelSpan(1, 23), 28, "23"),
    (23, LevelSpan(1, 23), 28, None),
    (26, LevelSpan(1, 23), 28, None),     # already past the removal: nothing to raise to
    (16, LevelSpan(1, SENTINEL), 28, "latest"),
    (28, LevelSpan(1, SENTINEL), 28, None),
    (30, LevelSpan(1, SENTINEL), 28, None),
    (28, LevelSpan(1, SENTINEL), None, "latest"),
])
def test_obsolete_target(target, span, known, expected):
    f = check_obsolete_target(Dsdk(1, target), span, known)
    assert (f.recommend if f else None) == expected
    if f:
        assert f.kind == OBSOLETE_TARGET and f.max_level == span.maxLevel


def _vuln(origin="app_own", lib=None):
    rule = default_rules()[0]
    raw = RawCallSite(rule.ref, "Lcom/a/Main;", OWNER, 12)
    return VulnCallSite(rule.rule_id, raw, origin, lib)


@pytest.mark.parametrize("target,count", [(1, 1), (16, 1), (17, 0), (28, 0)])
def test_security_threshold_is_strict(target, count):
    findings = check_security(Dsdk(1, target), [_vuln()], default_rules())
    assert len(findings) == count
    for f in findings:
        assert (f.kind, f.threshold, f.location) == (SECURITY, 17, f"{OWNER}@12")


def test_security_keeps_origin_per_site():
    vulns = [_vuln(), _vuln("third_party", "Lcom/flurry/android/CatalogActivity;")]
    findings = check_security(Dsdk(9, 16), vulns, default_rules())
    assert [(f.origin, f.library_class) for f in findings] == \
        [("app_own", None), ("third_party", "Lcom/flurry/android/CatalogActivity;")]


def test_security_unknown_rule():
    raw = RawCallSite(MethodRef("La;", "b", "()V"), "La;", OWNER, 0)
    with pytest.raises(KeyError):
        check_security(Dsdk(1, 1), [VulnCallSite("nope", raw, "app_own")], default_rules())


def test_lag():
    assert lag_sdk_version(Dsdk(16, 26)) == 10
    assert lag_sdk_version(Dsdk(8, 0)) == -8


def test_deprecation_notes_skip_removed():
    notes = deprecation_notes([site("a", 1, deprecated=22), site("b", 1, removed=23, deprecated=22),
                               site("a", 1, deprecated=22, offset=2)])
    assert notes == ["Landroid/x/Api;->a()V deprecated at level 22"]


# -- properties -------------------------------------------------------------

calls_strategy = st.lists(
    st.tuples(st.sampled_from("abcdefgh"), st.integers(1, 30), st.one_of(st.none(), st.integers(2, 31))),
    max_size=20)


def _sites(raw):
    # one lifecycle per API name, as in a real database
    lifecycles = {}
    for name, since, removed in raw:
        if name not in lifecycles:
            lifecycles[name] = (since, removed if removed is None or removed > since else None)
    return [site(name, *lifecycles[name], offset=i) for i, (name, _, _) in enumerate(raw)]


@settings(max_examples=200, deadline=None)
@given(calls_strategy, st.integers(1, 30))
def test_min_over_num_is_distinct_count(raw, min_sdk):
    calls = _sites(raw)
    result = check_compatibility(Dsdk(min_sdk, 30), calls)
    assert result.minOverNum == len({c.ref for c in calls if c.lifecycle.since > min_sdk})
    for f in result.findings:
        assert f.since > min_sdk and f.crash_range == (min_sdk, f.since)
    span = compute_levels(calls)
    # the app is fully compatible exactly when it needs nothing above min
    assert (result.minOverNum == 0) == (span.minLevel <= min_sdk)


@settings(max_examples=200, deadline=None)
@given(calls_strategy, st.integers(1, 29))
def test_raising_min_never_adds_findings(raw, min_sdk):
    calls = _sites(raw)
    lo = check_compatibility(Dsdk(min_sdk, 30), calls)
    hi = check_compatibility(Dsdk(min_sdk + 1, 30), calls)
    assert {f.api for f in hi.findings} <= {f.api for f in lo.findings}


@settings(max_examples=200, deadline=None)
@given(calls_strategy, calls_strategy)
def test_span_of_union(a, b):
    sa, sb = compute_levels(_sites(a)), compute_levels(_sites(b))
    both = compute_levels(_sites(a + b))
    # names may collide across the halves; recompute from the merged lifecycles
    assert both.minLevel >= 1 and both.maxLevel <= SENTINEL
    if not (set(n for n, *_ in a) & set(n for n, *_ in b)):
        assert both.minLevel == max(sa.minLevel, sb.minLevel)
        assert both.maxLevel == min(sa.maxLevel, sb.maxLevel)
