"""Large synthetic apps for throughput measurements.

:func:`bulk_app` spreads a requested amount of bytecode over several DEX
files and can pad the archive with incompressible resources, giving APKs
with the size profile of real store apps.
"""

from __future__ import annotations

import functools
import os
import random
from typing import Optional

from ..apidb import MethodRef
from .axmlgen import build_axml, manifest_tree
from .apkgen import write_apk
from ..dex.parser import FieldRef
from .dexgen import ACC_PUBLIC, ACC_STATIC, Asm, DexBuilder
from .fixtures import (GET_COLOR, JOB_SCHEDULE, SET_ELEVATION, SET_VISIBILITY, STRING_IS_EMPTY,
                       VPN_ADD_DISALLOWED, WEBVIEW_LOAD_URL, descriptor, emit_call)

_FRAMEWORK_CALLS = (SET_VISIBILITY, WEBVIEW_LOAD_URL, STRING_IS_EMPTY, SET_ELEVATION, GET_COLOR, JOB_SCHEDULE,
                    VPN_ADD_DISALLOWED)

_BLOCKS_PER_METHOD = 40
_METHODS_PER_CLASS = 8
_GUARDED_METHOD_EVERY = 8  # one method in this many checks SDK_INT
_GUARD_EVERY = 8  # and guards one block in this many
_PADDING_NAME = "res/raw/padding.bin"
_FIELD = FieldRef("Lcom/example/bulk/State;", "count", "I")


def _block(asm: Asm, i: int, helper: MethodRef, rng: random.Random, guards: bool):
    """Typical app code: a null check, framework and helper calls, field and
    string traffic; every few blocks the framework call sits under a guard."""
    ref = _FRAMEWORK_CALLS[rng.randrange(len(_FRAMEWORK_CALLS))]
    guarded = guards and i % _GUARD_EVERY == 0
    asm.iget(4, 7, _FIELD).if_testz("eq", 4, f"n{i}")
    if guarded:
        asm.sget(0).const(1, rng.choice((14, 19, 21, 23))).if_test("lt", 0, 1, f"n{i}")
    emit_call(asm, ref)
    asm.label(f"n{i}")
    asm.invoke("static", helper).move_result(5)
    asm.const_string(3, f"k{i % 97}").add_int_lit8(5, 5, 1)
    emit_call(asm, SET_VISIBILITY)
    asm.move(6, 5)


def _method_body(helper: MethodRef, rng: random.Random, guards: bool = True) -> Asm:
    asm = Asm()
    for i in range(_BLOCKS_PER_METHOD):
        _block(asm, i, helper, rng, guards)
    return asm.return_void()


@functools.lru_cache(maxsize=None)
def _class_bytes() -> int:
    """Marginal DEX size of one bulk class (difference of two small builds)."""
    sizes = []
    for n in (1, 3):
        dex = DexBuilder()
        helper = MethodRef("La;", "tick", "()I")
        rng = random.Random(0)
        for c in range(n):
            cls = dex.add_class(f"La/C{c};", "Landroid/app/Activity;")
            for m in range(_METHODS_PER_CLASS):
                cls.method(f"m{m}", "()V", _method_body(helper, rng, m % _GUARDED_METHOD_EVERY == 0), locals=8)
        sizes.append(len(dex.build()))
    return (sizes[1] - sizes[0]) // 2


def bulk_dex(package: str, index: int, target_bytes: int, seed: int = 0) -> bytes:
    """One DEX file of roughly ``target_bytes`` bytes."""
    rng = random.Random(seed * 1000 + index)
    dex = DexBuilder()
    helper_cls = f"{package}.d{index}.Helper"
    helper = MethodRef(descriptor(helper_cls), "tick", "()I")
    dex.add_class(descriptor(helper_cls)).method("tick", "()I", Asm().const(0, 1).return_value(0),
                                                 access=ACC_PUBLIC | ACC_STATIC, locals=1)
    n_classes = max(1, target_bytes // _class_bytes())
    for c in range(n_classes):
        cls = dex.add_class(descriptor(f"{package}.d{index}.C{c}"), "Landroid/app/Activity;")
        for m in range(_METHODS_PER_CLASS):
            guards = m % _GUARDED_METHOD_EVERY == 0
            cls.method(f"m{m}", "()V", _method_body(helper, rng, guards), locals=8)
    return dex.build()


def bulk_app(path, dex_bytes: int, dex_files: int = 2, apk_bytes: Optional[int] = None,
             package: str = "com.example.bulk", min_sdk: int = 16, seed: int = 0) -> str:
    """Write an APK with ``dex_files`` DEX files totalling about ``dex_bytes``.

    When ``apk_bytes`` is given, a stored entry of random bytes pads the
    archive up to that size (real apps carry large image and media assets).
    """
    blobs = [bulk_dex(package, i, dex_bytes // dex_files, seed) for i in range(dex_files)]
    manifest = build_axml(manifest_tree(package, min_sdk=min_sdk, target_sdk=28,
                                        components=[("activity", ".d0.C0")]))
    path = write_apk(path, manifest, blobs)
    if apk_bytes:
        # stored padding; the local and central headers add a little over 100 bytes
        short = apk_bytes - os.path.getsize(path) - 2 * (46 + len(_PADDING_NAME))
        if short > 0:
            path = write_apk(path, manifest, blobs,
                             extra={_PADDING_NAME: random.Random(seed).randbytes(short)})
    return path
