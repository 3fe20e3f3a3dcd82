"""Synthetic ``api-versions.xml`` documents at the size of the real SDK file.

The real Android 9 file describes roughly five thousand classes with about
forty thousand methods and twenty thousand fields.  :func:`write_api_versions`
produces a document of that shape (deterministic for a given seed) so the
parser's throughput can be measured without the SDK installed.
"""

from __future__ import annotations

import random
from typing import Optional
from xml.sax.saxutils import quoteattr

_TYPES = ("I", "J", "Z", "F", "Ljava/lang/String;", "Landroid/content/Context;", "[B", "Landroid/os/Bundle;")


def _level(rng: random.Random, top: int) -> int:
    # most of the surface predates level 10; later levels add a steady trickle
    return 1 if rng.random() < 0.45 else rng.randint(2, top)


def api_versions_text(classes: int = 5000, methods_per_class: int = 8, fields_per_class: int = 4,
                      top_level: int = 28, seed: int = 0, extra: Optional[str] = None) -> str:
    """The document as a string; ``extra`` (raw ``<class>`` elements) is inserted verbatim."""
    rng = random.Random(seed)
    out = ['<?xml version="1.0" encoding="utf-8"?>\n<api version="2">\n']
    names = []
    for c in range(classes):
        pkg = rng.choice(("android/app", "android/view", "android/widget", "android/net", "java/util",
                          "android/media", "android/content", "java/io"))
        name = f"{pkg}/Synth{c}"
        names.append(name)
        since = _level(rng, top_level)
        attrs = f'name="{name}" since="{since}"'
        removed = None
        if rng.random() < 0.01 and since < top_level - 2:
            removed = rng.randint(since + 1, top_level)
            attrs += f' deprecated="{since}" removed="{removed}"'
        out.append(f"\t<class {attrs}>\n")
        parent = rng.choice(names[:-1]) if len(names) > 1 and rng.random() < 0.6 else "java/lang/Object"
        out.append(f'\t\t<extends name="{parent}"/>\n')
        if rng.random() < 0.2:
            out.append(f'\t\t<implements name="{rng.choice(names)}"/>\n')
        for m in range(rng.randint(methods_per_class // 2, methods_per_class * 3 // 2)):
            params = "".join(rng.choice(_TYPES) for _ in range(rng.randint(0, 3)))
            member = quoteattr(f"m{m}({params}){rng.choice(_TYPES + ('V',))}")
            member_since = since if removed is not None or rng.random() < 0.6 else rng.randint(since, top_level)
            extra_attrs = f' since="{member_since}"' if member_since != since else ""
            if removed is not None:
                extra_attrs += f' deprecated="{since}" removed="{removed}"'
            out.append(f"\t\t<method name={member}{extra_attrs}/>\n")
        for f in range(rng.randint(0, fields_per_class * 2)):
            out.append(f'\t\t<field name="F{f}"/>\n')
        out.append("\t</class>\n")
    if extra:
        out.append(extra)
    out.append("</api>\n")
    return "".join(out)


def write_api_versions(path, **kwargs) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(api_versions_text(**kwargs))
    return str(path)
