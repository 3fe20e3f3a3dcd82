"""Named synthetic apps with known contents.

Each builder returns an :class:`AppSpec`; :func:`write_app` turns it into an
APK.  The same catalogue feeds the checked-in test fixtures, the demos and the
golden-file generator.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from ..apidb import MethodRef
from .apkgen import write_apk
from .axmlgen import Node, build_axml, manifest_tree
from .dexgen import ACC_PUBLIC, ACC_STATIC, Asm, DexBuilder

VPN_ADD_DISALLOWED = MethodRef("Landroid/net/VpnService$Builder;", "addDisallowedApplication",
                               "(Ljava/lang/String;)Landroid/net/VpnService$Builder;")
WEBVIEW_ADD_JS = MethodRef("Landroid/webkit/WebView;", "addJavascriptInterface",
                           "(Ljava/lang/Object;Ljava/lang/String;)V")
WEBVIEW_LOAD_URL = MethodRef("Landroid/webkit/WebView;", "loadUrl", "(Ljava/lang/String;)V")
FLOATMATH_SQRT = MethodRef("Landroid/util/FloatMath;", "sqrt", "(F)F")
SET_ELEVATION = MethodRef("Landroid/view/View;", "setElevation", "(F)V")
SET_VISIBILITY = MethodRef("Landroid/view/View;", "setVisibility", "(I)V")
GET_COLOR = MethodRef("Landroid/content/Context;", "getColor", "(I)I")
SET_CHANNEL_ID = MethodRef("Landroid/app/Notification$Builder;", "setChannelId",
                           "(Ljava/lang/String;)Landroid/app/Notification$Builder;")
SHORTCUTS = MethodRef("Landroid/content/pm/ShortcutManager;", "getDynamicShortcuts", "()Ljava/util/List;")
STRING_IS_EMPTY = MethodRef("Ljava/lang/String;", "isEmpty", "()Z")
JOB_SCHEDULE = MethodRef("Landroid/app/job/JobScheduler;", "schedule", "(Landroid/app/job/JobInfo;)I")
ON_CREATE = "(Landroid/os/Bundle;)V"
ACTIVITY_INIT = MethodRef("Landroid/app/Activity;", "<init>", "()V")

# the analysed levels of the calls above (mirrors tests/data/mini-api-versions.xml)
SINCE = {
    VPN_ADD_DISALLOWED: 21, WEBVIEW_ADD_JS: 1, WEBVIEW_LOAD_URL: 1, FLOATMATH_SQRT: 1,
    SET_ELEVATION: 21, SET_VISIBILITY: 1, GET_COLOR: 23, SET_CHANNEL_ID: 26, SHORTCUTS: 25,
    STRING_IS_EMPTY: 9, JOB_SCHEDULE: 21, ACTIVITY_INIT: 1,
}


@dataclass
class AppSpec:
    name: str
    package: str
    dex: list  # [DexBuilder]
    manifest: Node
    extra: dict = field(default_factory=dict)
    compress: bool = True

    def manifest_bytes(self) -> bytes:
        return build_axml(self.manifest)

    def dex_bytes(self) -> list:
        return [b.build() for b in self.dex]


def write_app(spec: AppSpec, path, **kwargs) -> str:
    return write_apk(path, spec.manifest_bytes(), spec.dex_bytes(), extra=spec.extra,
                     compress=spec.compress, **kwargs)


def descriptor(dotted: str) -> str:
    return "L" + dotted.replace(".", "/") + ";"


# -- method bodies --------------------------------------------------------

def emit_call(asm: Asm, ref: MethodRef, static: bool = False) -> Asm:
    """Invoke ``ref`` with placeholder argument registers starting at v2."""
    params = ref.signature[1:ref.signature.index(")")]
    n = 0
    i = 0
    while i < len(params):
        while params[i] == "[":
            i += 1
        if params[i] == "L":
            i = params.index(";", i)
        n += 2 if params[i] in "JD" else 1
        i += 1
    regs = list(range(2, 2 + n + (0 if static else 1)))
    return asm.invoke("static" if static else "virtual", ref, *regs)


def body(*refs, guard: Optional[tuple] = None) -> Asm:
    """Method body calling ``refs``, optionally under an SDK_INT guard.

    ``guard`` is (shape, level) with shape one of:
    ``"fallthrough"``  if (SDK_INT >= level) { calls }   -> if-lt skips the calls
    ``"taken"``        if (SDK_INT < level) { } else { calls } -> if-ge jumps to calls
    ``"reversed"``     if (level <= SDK_INT) { calls }   -> if-gt level, SDK skips
    """
    asm = Asm()
    if guard is None:
        for ref in refs:
            emit_call(asm, ref)
        return asm.return_void()
    shape, level = guard
    if shape == "fallthrough":
        asm.sget(0).const(1, level).if_test("lt", 0, 1, "skip")
        for ref in refs:
            emit_call(asm, ref)
        asm.label("skip")
    elif shape == "taken":
        asm.sget(0).const(1, level).if_test("ge", 0, 1, "new")
        emit_call(asm, SET_VISIBILITY)
        asm.goto("end").label("new")
        for ref in refs:
            emit_call(asm, ref)
        asm.label("end")
    elif shape == "reversed":
        asm.const(1, level).sget(0).if_test("gt", 1, 0, "skip")
        for ref in refs:
            emit_call(asm, ref)
        asm.label("skip")
    else:
        raise ValueError(f"unknown guard shape {shape!r}")
    return asm.return_void()


def add_component(dex: DexBuilder, dotted: str, superclass="Landroid/app/Activity;",
                  on_create: Optional[Asm] = None, extra_methods=()):
    cls = dex.add_class(descriptor(dotted), superclass)
    cls.method("<init>", "()V",
               Asm().invoke("direct", MethodRef(superclass, "<init>", "()V"), 0).return_void(), locals=0)
    cls.method("onCreate", ON_CREATE, on_create or Asm().return_void(), locals=6)
    for name, sig, code in extra_methods:
        cls.method(name, sig, code, locals=6)
    return cls


def add_helper(dex: DexBuilder, dotted: str, method: str, code: Asm, static: bool = False):
    cls = dex.add_class(descriptor(dotted))
    cls.method(method, "()V", code, access=ACC_PUBLIC | (ACC_STATIC if static else 0), locals=6)
    return cls


def _simple(name, package, min_sdk, target_sdk, main_body, components=None, max_sdk=None):
    dex = DexBuilder()
    add_component(dex, f"{package}.MainActivity", on_create=main_body)
    manifest = manifest_tree(package, min_sdk=min_sdk, target_sdk=target_sdk, max_sdk=max_sdk,
                             components=components or [("activity", ".MainActivity")])
    return AppSpec(name, package, [dex], manifest)


# -- catalogue ------------------------------------------------------------

LATEST = 28  # newest level in the mini database


def under_set_min():
    """min 19 with an unguarded since-21 call."""
    return _simple("under_set_min", "com.example.vpn", 19, LATEST, body(VPN_ADD_DISALLOWED))


def clean():
    return _simple("clean", "com.example.vpnclean", 21, LATEST, body(VPN_ADD_DISALLOWED))


def guarded(shape="fallthrough", level=21, min_sdk=19):
    return _simple(f"guarded_{shape}_{level}", "com.example.guard", min_sdk, LATEST,
                   body(VPN_ADD_DISALLOWED, guard=(shape, level)))


def vuln_own(target=16):
    package = "com.exsoul"
    dex = DexBuilder()
    add_component(dex, f"{package}.Browser", on_create=body(WEBVIEW_ADD_JS, WEBVIEW_LOAD_URL))
    manifest = manifest_tree(package, min_sdk=9, target_sdk=target, components=[("activity", ".Browser")])
    return AppSpec(f"vuln_own_t{target}", package, [dex], manifest)


def vuln_library(registered=True, target=16, lib="com.flurry.android.CatalogActivity"):
    """A JavaScript bridge created inside a library class of a foreign package."""
    package = "com.foo"
    dex = DexBuilder()
    add_component(dex, f"{package}.Main", on_create=body(SET_VISIBILITY))
    add_component(dex, lib, on_create=body(WEBVIEW_ADD_JS))
    components = [("activity", ".Main")]
    if registered:
        components.append(("activity", lib))
    manifest = manifest_tree(package, min_sdk=9, target_sdk=target, components=components)
    tag = "registered" if registered else "unregistered"
    return AppSpec(f"vuln_library_{tag}_t{target}", package, [dex], manifest)


def vuln_library_called(target=16):
    """Unregistered library class whose method is invoked by app code (origin: app)."""
    package = "com.foo.called"
    dex = DexBuilder()
    helper = MethodRef("Lcom/adlib/Bridge;", "install", "()V")
    add_component(dex, f"{package}.Main", on_create=Asm().invoke("static", helper).return_void())
    add_helper(dex, "com.adlib.Bridge", "install", body(WEBVIEW_ADD_JS), static=True)
    manifest = manifest_tree(package, min_sdk=9, target_sdk=target, components=[("activity", ".Main")])
    return AppSpec(f"vuln_library_called_t{target}", package, [dex], manifest)


def multidex(split=True):
    """Offending call in a helper class; in classes2.dex when ``split``."""
    package = "com.example.multi"
    first = DexBuilder()
    helper = MethodRef(descriptor(f"{package}.net.Tunnel"), "start", "()V")
    add_component(first, f"{package}.MainActivity",
                  on_create=Asm().invoke("static", helper).return_void())
    second = DexBuilder() if split else first
    add_helper(second, f"{package}.net.Tunnel", "start", body(VPN_ADD_DISALLOWED), static=True)
    manifest = manifest_tree(package, min_sdk=19, target_sdk=LATEST, components=[("activity", ".MainActivity")])
    dex = [first, second] if split else [first]
    return AppSpec("multidex" if split else "multidex_single", package, dex, manifest)


def no_target():
    return _simple("no_target", "com.example.notarget", 15, None, body(SET_VISIBILITY))


def no_min():
    return _simple("no_min", "com.example.nomin", None, 22, body(SET_VISIBILITY))


def no_uses_sdk():
    spec = _simple("no_uses_sdk", "com.example.bare", None, None, body(SET_VISIBILITY))
    spec.manifest = manifest_tree("com.example.bare", components=[("activity", ".MainActivity")], uses_sdk=False)
    return spec


def duplicate_min():
    spec = _simple("duplicate_min", "com.example.dupmin", 14, LATEST, body(STRING_IS_EMPTY))
    second = Node("uses-sdk", [("minSdkVersion", 21, True)])
    spec.manifest.children.insert(1, second)
    return spec


def outlier_target_zero():
    return _simple("outlier_target_zero", "com.example.outlier", 8, 0, body(SET_VISIBILITY))


def removed_api(target=16):
    return _simple(f"removed_api_t{target}", "com.example.floatmath", 8, target, body(FLOATMATH_SQRT))


def many_apis():
    """Several over-min calls, one API called from two sites."""
    package = "com.example.many"
    dex = DexBuilder()
    add_component(dex, f"{package}.MainActivity",
                  on_create=body(SET_ELEVATION, GET_COLOR, SET_ELEVATION, SHORTCUTS, STRING_IS_EMPTY))
    add_component(dex, f"{package}.Settings", on_create=body(SET_CHANNEL_ID, JOB_SCHEDULE))
    manifest = manifest_tree(package, min_sdk=16, target_sdk=26, max_sdk=27,
                             components=[("activity", ".MainActivity"), ("activity", ".Settings")])
    return AppSpec("many_apis", package, [dex], manifest)


def kitchen_sink():
    """Decoder coverage: range and interface invokes, payloads, wide constants,
    non-ASCII strings and classes without code."""
    package = "com.example.sink"
    dex = DexBuilder(version=38)
    run = MethodRef("Ljava/lang/Runnable;", "run", "()V")
    wide = MethodRef(descriptor(f"{package}.Util"), "mix", "(JIDLjava/lang/String;I)V")
    asm = (Asm().const(0, 7).const(1, -100000).const(2, 0x7FFF0000).const(3, 1 << 40, wide=True)
           .const_string(5, "h\u00e9llo \u2603 \U0001F600").new_instance(6, "Ljava/lang/Object;")
           .invoke("interface", run, 6).invoke("static/range", wide, 0, 1, 2, 3, 4, 5, 6)
           .invoke("super", MethodRef("Landroid/app/Activity;", "onCreate", ON_CREATE), 8, 9)
           .label("sw_at").packed_switch(0, "sw").fill_array_data(1, "arr")
           .label("c0"))
    emit_call(asm, SET_ELEVATION)
    asm.return_void()
    asm.label("sw").packed_switch_payload(3, ["c0", "c0"], "sw_at")
    asm.label("arr").array_payload(4, [1, -2, 3])
    cls = dex.add_class(descriptor(f"{package}.MainActivity"), "Landroid/app/Activity;",
                        interfaces=("Ljava/lang/Runnable;",))
    cls.method("<init>", "()V",
               Asm().invoke("direct", MethodRef("Landroid/app/Activity;", "<init>", "()V"), 0).return_void(),
               locals=0)
    cls.method("onCreate", ON_CREATE, asm, locals=8)
    cls.method("run", "()V", body(GET_COLOR, guard=("taken", 23)), locals=6)
    util = dex.add_class(descriptor(f"{package}.Util"))
    util.method("mix", "(JIDLjava/lang/String;I)V", Asm().return_void(), access=ACC_PUBLIC | ACC_STATIC,
                locals=0)
    dex.add_class(descriptor(f"{package}.Marker"), interfaces=("Ljava/io/Serializable;",))
    manifest = manifest_tree(package, min_sdk=21, target_sdk=LATEST, application_name=".App",
                             components=[("activity", ".MainActivity")])
    return AppSpec("kitchen_sink", package, [dex], manifest, compress=False)


def catalogue() -> dict:
    """Every named fixture, keyed by its file stem."""
    specs = [
        under_set_min(), clean(),
        guarded("fallthrough", 21), guarded("taken", 21), guarded("reversed", 21), guarded("fallthrough", 19),
        guarded("taken", 19),
        vuln_own(16), vuln_own(17),
        vuln_library(True, 16), vuln_library(False, 16), vuln_library(True, 17), vuln_library_called(16),
        multidex(True), multidex(False),
        no_target(), no_min(), no_uses_sdk(), duplicate_min(), outlier_target_zero(),
        removed_api(16), removed_api(26), many_apis(), kitchen_sink(),
    ]
    return {s.name: s for s in specs}


# -- randomized apps ------------------------------------------------------

RANDOM_POOL = (VPN_ADD_DISALLOWED, WEBVIEW_ADD_JS, SET_ELEVATION, SET_VISIBILITY, GET_COLOR,
               SET_CHANNEL_ID, SHORTCUTS, STRING_IS_EMPTY, JOB_SCHEDULE)


@dataclass
class PlannedCall:
    owner: str  # dotted class name
    ref: MethodRef
    guard: Optional[tuple]  # (shape, level) as passed to body(); "else" marks the below-level branch

    @property
    def lowest_level(self) -> int:
        """Lowest platform level on which the call can execute."""
        if self.guard is None or self.guard[0] == "else":
            return 1
        return self.guard[1]


def random_app(rng: random.Random, index: int):
    """A random app plus the plan it was built from (for brute-force oracles).

    Classes live in the app package or in one of a few library packages;
    some library classes are registered as components.
    """
    package = f"com.rand.app{index}"
    libs = [f"com.lib{k}.sdk" for k in range(rng.randint(1, 3))]
    dex = DexBuilder()
    components = []
    plan = []
    n_classes = rng.randint(2, 7)
    for c in range(n_classes):
        if c == 0 or rng.random() < 0.45:
            dotted = f"{package}.{rng.choice(['ui', 'net', 'core'])}.C{c}"
        else:
            dotted = f"{rng.choice(libs)}.L{c}"
        calls = rng.sample(RANDOM_POOL, rng.randint(0, 4))
        guard = None
        if calls and rng.random() < 0.5:
            guard = (rng.choice(["fallthrough", "taken", "reversed"]), rng.choice([14, 19, 21, 23, 26]))
        add_component(dex, dotted, on_create=body(*calls, guard=guard) if calls else None)
        # every invoke the builder emits, including the constructor chain and the
        # unguarded else-branch call of the "taken" shape
        plan.append(PlannedCall(dotted, ACTIVITY_INIT, None))
        if guard is not None and guard[0] == "taken":
            plan.append(PlannedCall(dotted, SET_VISIBILITY, ("else", guard[1])))
        plan.extend(PlannedCall(dotted, ref, guard) for ref in calls)
        if c == 0 or rng.random() < 0.3:
            components.append(("activity", dotted))
    manifest = manifest_tree(package, min_sdk=rng.choice([9, 14, 16, 19, 21]),
                             target_sdk=rng.choice([16, 17, 23, 26, 28]), components=components)
    spec = AppSpec(f"random_{index}", package, [dex], manifest)
    return spec, plan, [name for _, name in components]
