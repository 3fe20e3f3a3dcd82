import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdklint.apidb import MethodRef, descriptor_to_dotted
from sdklint.calls import (_Resolver, extract_valid_calls, find_vulnerable_calls, guard_protects, guard_regions,
                           is_live_name, liveness_mask, min_level_satisfying)
from sdklint.dex import parse_dex
from sdklint.report import VetOptions, vet_one
from sdklint.rules import default_rules
from sdklint.synth.dexgen import Asm, DexBuilder
from sdklint.synth.fixtures import (GET_COLOR, SINCE, VPN_ADD_DISALLOWED, WEBVIEW_ADD_JS, descriptor, emit_call,
                                    random_app, write_app)

from oracles import compare_by_enumeration, expected_valid_calls, guard_protects_by_enumeration

OPS = ("eq", "ne", "lt", "ge", "gt", "le")
TOP = 200


# -- guard truth table ------------------------------------------------------

def _first_satisfying(op, k, top=TOP + 10):
    return next((level for level in range(1, top + 1) if compare_by_enumeration(op, k, level)), None)


@pytest.mark.parametrize("op", OPS)
def test_min_level_matches_enumeration(op):
    for k in range(-5, TOP + 1):
        assert min_level_satisfying(op, k) == _first_satisfying(op, k), (op, k)


@pytest.mark.parametrize("op", OPS)
def test_guard_truth_table_levels_1_to_200(op):
    for k in range(-2, TOP + 3):
        satisfying = [lvl for lvl in range(1, TOP + 1) if compare_by_enumeration(op, k, lvl)]
        for since in range(1, TOP + 1):
            expected = not any(lvl < since for lvl in satisfying)
            assert guard_protects(op, k, since) == expected, (op, k, since)


def test_enumeration_helper_agrees_on_a_sample():
    for op in OPS:
        for k in (0, 1, 19, 21, 150):
            for since in (1, 2, 21, 22, 200):
                assert guard_protects(op, k, since) == guard_protects_by_enumeration(op, k, since)


# -- guard regions on small bodies -------------------------------------------

def _method(asm, locals=6):
    dex = DexBuilder()
    dex.add_class("Lt/A;").method("f", "()V", asm, locals=locals)
    return parse_dex(dex.build()).class_defs[0].methods[0]


def _guard_of_call(asm, ref=VPN_ADD_DISALLOWED):
    m = _method(asm)
    sites = extract_valid_calls([_image_of(m)], {"Lt/A;": True}, _db(), None)
    return next(s for s in sites if s.ref == ref)


_CACHE = {}


def _db():
    if "db" not in _CACHE:
        from sdklint.apidb import load_api_db
        from conftest import MINI_DB
        _CACHE["db"] = load_api_db(MINI_DB)
    return _CACHE["db"]


def _image_of(method):
    class _Cls:
        descriptor = "Lt/A;"
        superclass = "Ljava/lang/Object;"
        interfaces = ()
        methods = [method]

    class _Img:
        class_defs = [_Cls]
    return _Img


@pytest.mark.parametrize("op,k,protected", [
    ("lt", 21, True), ("lt", 19, False), ("lt", 22, True),
    ("le", 20, True), ("le", 19, False),
    ("ne", 21, True), ("ne", 1, False), ("eq", 0, False),
])
def test_fallthrough_region_uses_negated_comparison(op, k, protected):
    asm = Asm().sget(0).const(1, k).if_test(op, 0, 1, "skip")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.label("skip").return_void()
    site = _guard_of_call(asm)
    assert site.guarded_by is not None
    assert site.protected is protected


def test_constant_first_is_normalized():
    # if (21 > SDK_INT) skip  ==  if (SDK_INT < 21) skip
    asm = Asm().const(1, 21).sget(0).if_test("gt", 1, 0, "skip")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.label("skip").return_void()
    assert _guard_of_call(asm).protected


def test_taken_branch_needs_forward_goto():
    asm = Asm().sget(0).const(1, 21).if_test("ge", 0, 1, "new")
    asm.goto("end").label("new")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.label("end").return_void()
    assert _guard_of_call(asm).protected
    # without the goto the target block is also reached by falling through
    asm = Asm().sget(0).const(1, 21).if_test("ge", 0, 1, "new").nop().label("new")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.return_void()
    assert not _guard_of_call(asm).protected


def test_overwritten_register_is_not_a_guard():
    asm = Asm().sget(0).const(1, 21).const(0, 5).if_test("lt", 0, 1, "skip")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.label("skip").return_void()
    assert _guard_of_call(asm).guarded_by is None


def test_moved_sdk_int_is_tracked():
    asm = Asm().sget(0).move(3, 0).const(1, 21).if_test("lt", 3, 1, "skip")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.label("skip").return_void()
    assert _guard_of_call(asm).protected


def test_compare_with_zero_is_ignored():
    asm = Asm().sget(0).if_testz("eq", 0, "skip")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.label("skip").return_void()
    assert _guard_of_call(asm).guarded_by is None


def test_nested_guards_strongest_wins():
    asm = Asm().sget(0).const(1, 14).if_test("lt", 0, 1, "out").const(2, 21).if_test("lt", 0, 2, "out")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.label("out").return_void()
    site = _guard_of_call(asm)
    assert site.protected and site.guarded_by.threshold == 21


def test_call_after_guarded_block_is_unguarded():
    asm = Asm().sget(0).const(1, 21).if_test("lt", 0, 1, "skip").nop().label("skip")
    emit_call(asm, VPN_ADD_DISALLOWED)
    asm.return_void()
    assert _guard_of_call(asm).guarded_by is None


def test_guard_regions_shape():
    asm = Asm().sget(0).const(1, 21).if_test("lt", 0, 1, "skip").nop().nop().label("skip").return_void()
    regions = guard_regions(_method(asm).instructions)
    assert len(regions) == 1
    start, end, op, k, _ = regions[0]
    assert (op, k) == ("ge", 21) and end - start == 2


# -- liveness ---------------------------------------------------------------

@pytest.mark.parametrize("name,roots,package,live", [
    ("com.foo.Main", [], "com.foo", True),
    ("com.foobar.Main", [], "com.foo", False),
    ("com.flurry.android.CatalogActivity", ["com.flurry.android.CatalogActivity"], "com.foo", True),
    ("com.flurry.android.CatalogActivity$1", ["com.flurry.android.CatalogActivity"], "com.foo", True),
    ("com.flurry.android.Other", ["com.flurry.android.CatalogActivity"], "com.foo", False),
    ("com.lib.a.B", ["com.lib"], None, True),
    ("com.lib", ["com.lib.a.B"], None, True),
    ("com.libx.B", ["com.lib"], None, False),
])
def test_is_live_name(name, roots, package, live):
    assert is_live_name(name, roots, package) is live


def _built(spec):
    return [parse_dex(b) for b in spec.dex_bytes()]


# -- resolver ---------------------------------------------------------------

def test_app_class_call_is_lifted_to_framework_ancestor():
    dex = DexBuilder()
    cls = dex.add_class("Lcom/x/Main;", "Landroid/app/Activity;")
    own = MethodRef("Lcom/x/Main;", "getColor", "(I)I")
    cls.method("f", "()V", Asm().invoke("virtual", own, 0, 1).return_void(), locals=2)
    images = [parse_dex(dex.build())]
    sites = extract_valid_calls(images, {"Lcom/x/Main;": True}, _db())
    assert [(str(s.ref), s.lifecycle.since) for s in sites] == [(str(own), 23)]


def test_app_override_stops_lifting():
    dex = DexBuilder()
    cls = dex.add_class("Lcom/x/Main;", "Landroid/app/Activity;")
    own = MethodRef("Lcom/x/Main;", "getColor", "(I)I")
    cls.method("getColor", "(I)I", Asm().const(0, 0).return_value(0), locals=1)
    cls.method("f", "()V", Asm().invoke("virtual", own, 0, 1).return_void(), locals=2)
    images = [parse_dex(dex.build())]
    assert extract_valid_calls(images, {"Lcom/x/Main;": True}, _db()) == []


def test_rule_matches_through_app_subclass():
    dex = DexBuilder()
    dex.add_class("Lcom/x/MyWebView;", "Landroid/webkit/WebView;")
    main = dex.add_class("Lcom/x/Main;", "Landroid/app/Activity;")
    ref = WEBVIEW_ADD_JS._replace(class_descriptor="Lcom/x/MyWebView;")
    main.method("f", "()V", Asm().invoke("virtual", ref, 1, 2, 3).return_void(), locals=4)
    images = [parse_dex(dex.build())]
    mask = {"Lcom/x/MyWebView;": True, "Lcom/x/Main;": True}
    found = find_vulnerable_calls(images, mask, default_rules(), "com.x", _db())
    assert [(v.origin, v.call.owner_class) for v in found] == [("app_own", "Lcom/x/Main;")]


def test_dead_library_method_called_by_other_class_is_kept():
    dex = DexBuilder()
    lib = dex.add_class("Lorg/ads/Bridge;")
    code = Asm()
    emit_call(code, WEBVIEW_ADD_JS)
    lib.method("install", "()V", code.return_void(), locals=6)
    other = dex.add_class("Lorg/ads/Loader;")
    other.method("go", "()V", Asm().invoke("virtual", MethodRef("Lorg/ads/Bridge;", "install", "()V"), 0)
                 .return_void(), locals=1)
    images = [parse_dex(dex.build())]
    mask = {"Lorg/ads/Bridge;": False, "Lorg/ads/Loader;": False}
    found = find_vulnerable_calls(images, mask, default_rules(), "com.app", _db())
    assert [(v.origin, v.library_class, v.callers) for v in found] == \
        [("third_party", "Lorg/ads/Bridge;", ("Lorg/ads/Loader;",))]


# -- randomized apps against a brute-force oracle ---------------------------

@pytest.mark.parametrize("seed", range(20))
def test_random_apps_valid_calls_match_oracle(tmp_path, seed):
    db = _db()
    spec, plan, registered = random_app(random.Random(seed), seed)
    path = write_app(spec, tmp_path / f"{spec.name}.apk")
    by_mask = {}
    for all_live in (False, True):
        report = vet_one(path, db, default_rules(), VetOptions(all_live=all_live, keep_sites=True))
        assert report.ok, report.error
        valid = sorted((s.owner_class, str(s.ref)) for s in report.sites if s.valid)
        assert valid == expected_valid_calls(plan, spec.package, registered, SINCE, all_live)
        by_mask[all_live] = valid
        dsdk = report.dsdk
        over = {ref for _, ref in valid if SINCE[MethodRef.parse(ref)] > dsdk.min}
        assert report.minOverNum == len(over)
        expected_sec = sorted(
            "app_own" if c.owner.startswith(spec.package + ".") else "third_party"
            for c in plan if c.ref == WEBVIEW_ADD_JS
            and (all_live or c.owner.startswith(spec.package + ".") or c.owner in registered)
            and dsdk.target < 17)
        assert sorted(f.origin for f in report.findings if f.kind == "security") == expected_sec
    # monotonicity: treating everything as live can only add valid calls
    remaining = list(by_mask[True])
    for item in by_mask[False]:
        remaining.remove(item)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_mask_monotonicity_property(seed):
    db = _db()
    spec, _plan, _ = random_app(random.Random(seed), seed % 1000)
    images = _built(spec)
    resolver = _Resolver(images, db)
    descriptors = [c.descriptor for i in images for c in i.class_defs]
    rng = random.Random(seed)
    small = {d: rng.random() < 0.5 for d in descriptors}
    big = {d: small[d] or rng.random() < 0.5 for d in descriptors}
    vs = {(s.owner_class, s.ref, s.offset) for s in extract_valid_calls(images, small, db, resolver) if s.valid}
    vb = {(s.owner_class, s.ref, s.offset) for s in extract_valid_calls(images, big, db, resolver) if s.valid}
    assert vs <= vb


def test_liveness_mask_covers_all_classes():
    spec, _plan, registered = random_app(random.Random(7), 7)
    images = _built(spec)
    mask = liveness_mask(images, set(registered), spec.package)
    assert set(mask) == {c.descriptor for i in images for c in i.class_defs}
    for desc, live in mask.items():
        dotted = descriptor_to_dotted(desc)
        assert live == (dotted.startswith(spec.package + ".") or dotted in registered)


def test_get_color_guard_in_taken_shape():
    from sdklint.synth.fixtures import body
    m = _method(body(GET_COLOR, guard=("taken", 23)))
    site = extract_valid_calls([_image_of(m)], {"Lt/A;": True}, _db())
    site = next(s for s in site if s.ref == GET_COLOR)
    assert site.protected and site.guarded_by.comparison == "ge"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60), st.integers(1, 30), st.sampled_from(OPS), st.integers(-1, 30)),
                max_size=8),
       st.lists(st.tuples(st.integers(0, 90), st.integers(1, 30)), max_size=12))
def test_guard_sweep_matches_per_call_lookup(raw_regions, raw_calls):
    from types import SimpleNamespace

    from sdklint.apidb import ApiLifecycle
    from sdklint.calls import _guard_for, _guards_for_calls

    regions = [(s, s + n, op, k, s) for s, n, op, k in raw_regions]
    found = [(SimpleNamespace(offset=o), ApiLifecycle(since)) for o, since in sorted(raw_calls)]
    swept = _guards_for_calls(found, regions)
    assert swept == [_guard_for(i.offset, lc.since, regions) for i, lc in found]
