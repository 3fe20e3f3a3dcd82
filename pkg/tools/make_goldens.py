"""Regenerate the checked-in fixture APKs and their golden files.

Fixtures come from ``sdklint.synth.fixtures``.  Goldens are produced by
independent readers only: androguard for DEX disassembly and the manifest,
the standard-library ``zipfile`` for archive listings.  Nothing here imports
the sdklint parsers.

    python tools/make_goldens.py            # rewrite fixtures and goldens
    python tools/make_goldens.py --check    # fail if anything would change
"""

from __future__ import annotations

import argparse
import io
import json
import re
import sys
import zipfile
from collections import Counter
from pathlib import Path

from loguru import logger

from sdklint.synth.apkgen import write_apk
from sdklint.synth.fixtures import catalogue, under_set_min, write_app

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "data" / "fixtures"
GOLDEN = ROOT / "tests" / "golden"
PREFIX = b"#!/bin/sh\nexit 0\n" * 8


def canonical(text: str) -> str:
    # androguard separates parameter types with spaces; descriptors never contain any
    return text.replace(" ", "")


def disassemble(dex_bytes: bytes) -> dict:
    from androguard.core.dex import DEX

    dex = DEX(dex_bytes)
    methods = {}
    for cls in dex.get_classes():
        for m in cls.get_methods():
            key = canonical(f"{m.get_class_name()}->{m.get_name()}{m.get_descriptor()}")
            invokes, offsets = [], []
            off = 0
            for ins in m.get_instructions():
                offsets.append(off)
                if ins.get_name().startswith("invoke-"):
                    invokes.append(canonical(ins.get_translated_kind()))
                off += ins.get_length() // 2
            methods[key] = {"invokes": sorted(invokes), "offsets": offsets}
    return {"class_defs_size": len(dex.get_classes()), "methods": methods}


def manifest_facts(apk_path: Path, skip: int = 0) -> dict:
    from androguard.core.apk import APK

    if skip:
        # androguard cannot open archives with leading bytes; hand it the bare archive
        apk = APK(apk_path.read_bytes()[skip:], raw=True)
    else:
        apk = APK(str(apk_path))

    def as_int(v):
        return int(v) if v is not None else None

    components = []
    for kind, getter in (("activity", apk.get_activities), ("service", apk.get_services),
                         ("receiver", apk.get_receivers), ("provider", apk.get_providers)):
        components.extend([kind, name] for name in getter())
    return {
        "package": apk.get_package(),
        "minSdkVersion": as_int(apk.get_min_sdk_version()),
        "targetSdkVersion": as_int(apk.get_target_sdk_version()),
        "maxSdkVersion": as_int(apk.get_max_sdk_version()),
        "application": apk.get_attribute_value("application", "name"),
        "components": sorted(components),
    }


def zip_listing(data: bytes) -> list:
    with zipfile.ZipFile(io.BytesIO(data)) as zf:
        return [[i.filename, i.file_size, i.CRC, i.compress_type] for i in zf.infolist()]


def golden_for(apk_path: Path, skip: int = 0) -> dict:
    data = apk_path.read_bytes()
    doc = {"apk": apk_path.name, "zip": zip_listing(data), "manifest": manifest_facts(apk_path, skip), "dex": {}}
    with zipfile.ZipFile(io.BytesIO(data)) as zf:
        for name in zf.namelist():
            # the platform loads classes.dex, classes2.dex, classes3.dex, ... (no classes1.dex)
            if re.fullmatch(r"classes(?:[2-9]|[1-9][0-9]+)?\.dex", name):
                doc["dex"][name] = disassemble(zf.read(name))
    doc["invokeTotals"] = dict(sorted(Counter(
        t for d in doc["dex"].values() for m in d["methods"].values() for t in m["invokes"]).items()))
    return doc


def build_all(out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, spec in catalogue().items():
        written.append(Path(write_app(spec, out / f"{name}.apk")))
    # container quirks around the same app
    base = under_set_min()
    man, dex = base.manifest_bytes(), base.dex_bytes()
    written.append(Path(write_apk(out / "quirk_data_descriptor.apk", man, dex, data_descriptors=True)))
    written.append(Path(write_apk(out / "quirk_stored.apk", man, dex, compress=False)))
    written.append(Path(write_apk(out / "quirk_prefixed.apk", man, dex, prefix=PREFIX)))
    written.append(Path(write_apk(out / "quirk_extra_entries.apk", man, dex,
                                  extra={"assets/classes.dex": b"not bytecode", "classes1.dex": b"x",
                                         "lib/x86/libfoo.so": b"\x7fELF" + bytes(60)})))
    # broken inputs (no goldens)
    full = (out / "under_set_min.apk").read_bytes()
    (out / "broken_truncated.apk").write_bytes(full[: len(full) // 2])
    (out / "broken_not_zip.apk").write_bytes(b"this is not an archive\n" * 20)
    write_apk(out / "broken_no_dex.apk", man, {})
    write_apk(out / "broken_no_manifest.apk", b"", {"classes.dex": dex[0]})
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--check", action="store_true")
    args = parser.parse_args(argv)
    logger.remove()

    goldens = {}
    for apk in build_all(FIXTURES):
        skip = len(PREFIX) if apk.stem == "quirk_prefixed" else 0
        goldens[apk.stem] = json.dumps(golden_for(apk, skip), indent=1, sort_keys=True) + "\n"
    GOLDEN.mkdir(parents=True, exist_ok=True)
    changed = []
    for stem, text in goldens.items():
        path = GOLDEN / f"{stem}.json"
        if not path.exists() or path.read_text() != text:
            changed.append(path.name)
            if not args.check:
                path.write_text(text)
    if args.check and changed:
        print("out of date:", ", ".join(changed))
        return 1
    print(f"{len(goldens)} goldens, {len(changed)} updated")
    return 0


if __name__ == "__main__":
    sys.exit(main())
