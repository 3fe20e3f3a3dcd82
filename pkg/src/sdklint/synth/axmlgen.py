"""Binary XML (AXML) writer for synthetic manifests."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

from ..manifest import (ANDROID_NS, ATTR_MAX_SDK, ATTR_MIN_SDK, ATTR_NAME, ATTR_TARGET_SDK,
                        TYPE_INT_BOOLEAN, TYPE_INT_DEC, TYPE_REFERENCE, TYPE_STRING)

NO_INDEX = 0xFFFFFFFF

# resource ids of the android: attributes the writer knows about
KNOWN_IDS = {
    "name": ATTR_NAME,
    "minSdkVersion": ATTR_MIN_SDK,
    "targetSdkVersion": ATTR_TARGET_SDK,
    "maxSdkVersion": ATTR_MAX_SDK,
    "label": 0x01010001,
    "exported": 0x01010010,
    "versionCode": 0x0101021B,
    "versionName": 0x0101021C,
}


class Ref(int):
    """Marks an attribute value as a resource reference (``@0x7f...``)."""


@dataclass
class Node:
    tag: str
    attrs: list = field(default_factory=list)  # [(name, value, android_ns)]
    children: list = field(default_factory=list)

    def add(self, tag, **attrs):
        child = Node(tag, [(k, v, True) for k, v in attrs.items()])
        self.children.append(child)
        return child


def manifest_tree(package: str, min_sdk=None, target_sdk=None, max_sdk=None,
                  application_name: Optional[str] = None, components=(),
                  uses_sdk: bool = True) -> Node:
    """Build the usual manifest shape; ``components`` is [(tag, name)]."""
    root = Node("manifest", [("package", package, False), ("versionCode", 1, True)])
    sdk = {}
    if min_sdk is not None:
        sdk["minSdkVersion"] = min_sdk
    if target_sdk is not None:
        sdk["targetSdkVersion"] = target_sdk
    if max_sdk is not None:
        sdk["maxSdkVersion"] = max_sdk
    if uses_sdk:
        root.add("uses-sdk", **sdk)
    app_attrs = {"label": "app"}
    if application_name:
        app_attrs["name"] = application_name
    app = root.add("application", **app_attrs)
    for tag, name in components:
        app.add(tag, name=name)
    return root


def _encode_string(s: str, utf8: bool) -> bytes:
    if utf8:
        raw = s.encode("utf-8")
        n16 = len(s.encode("utf-16-le")) // 2

        def ln(n):
            return bytes([n]) if n < 0x80 else bytes([0x80 | (n >> 8), n & 0xFF])
        return ln(n16) + ln(len(raw)) + raw + b"\0"
    raw = s.encode("utf-16-le")
    return struct.pack("<H", len(raw) // 2) + raw + b"\0\0"


def build_axml(root: Node, utf8: bool = False, with_resource_map: bool = True) -> bytes:
    attr_names = []
    other = []

    def collect(node):
        for name, value, android in node.attrs:
            if android and name in KNOWN_IDS and with_resource_map:
                if name not in attr_names:
                    attr_names.append(name)
            elif name not in other:
                other.append(name)
            if isinstance(value, str) and value not in other:
                other.append(value)
        if node.tag not in other:
            other.append(node.tag)
        for c in node.children:
            collect(c)
    collect(root)
    # keep the namespace prefix right after the mapped names: some readers
    # probe the resource map one slot past its end
    other = ["android"] + [s for s in other if s != "android"]
    if ANDROID_NS not in other:
        other.append(ANDROID_NS)
    strings = attr_names + [s for s in other if s not in attr_names]
    idx = {s: i for i, s in enumerate(strings)}

    # string pool
    data = bytearray()
    offsets = []
    for s in strings:
        offsets.append(len(data))
        data += _encode_string(s, utf8)
    while len(data) % 4:
        data.append(0)
    header = 28
    strings_start = header + 4 * len(strings)
    pool = struct.pack("<HHIIIIII", 0x0001, header, strings_start + len(data), len(strings), 0,
                       0x100 if utf8 else 0, strings_start, 0)
    pool += struct.pack(f"<{len(strings)}I", *offsets) + data

    body = bytearray(pool)
    if attr_names:
        body += struct.pack("<HHI", 0x0180, 8, 8 + 4 * len(attr_names))
        body += struct.pack(f"<{len(attr_names)}I", *(KNOWN_IDS[n] for n in attr_names))
    body += struct.pack("<HHIIIII", 0x0100, 16, 24, 1, NO_INDEX, idx["android"], idx[ANDROID_NS])

    line = [2]

    def emit(node):
        attrs = []
        for name, value, android in node.attrs:
            ns = idx[ANDROID_NS] if android else NO_INDEX
            if isinstance(value, bool):
                vtype, vdata, raw = TYPE_INT_BOOLEAN, 0xFFFFFFFF if value else 0, NO_INDEX
            elif isinstance(value, Ref):
                vtype, vdata, raw = TYPE_REFERENCE, int(value), NO_INDEX
            elif isinstance(value, int):
                vtype, vdata, raw = TYPE_INT_DEC, value & 0xFFFFFFFF, NO_INDEX
            else:
                vtype, vdata, raw = TYPE_STRING, idx[value], idx[value]
            attrs.append(struct.pack("<IIIHBBI", ns, idx[name], raw, 8, 0, vtype, vdata))
        size = 16 + 20 + 20 * len(attrs)
        body.extend(struct.pack("<HHIII", 0x0102, 16, size, line[0], NO_INDEX))
        body.extend(struct.pack("<IIHHHHHH", NO_INDEX, idx[node.tag], 20, 20, len(attrs), 0, 0, 0))
        for a in attrs:
            body.extend(a)
        line[0] += 1
        for c in node.children:
            emit(c)
        body.extend(struct.pack("<HHIIIII", 0x0103, 16, 24, line[0], NO_INDEX, NO_INDEX, idx[node.tag]))

    emit(root)
    body += struct.pack("<HHIIIII", 0x0101, 16, 24, line[0], NO_INDEX, idx["android"], idx[ANDROID_NS])
    return struct.pack("<HHI", 0x0003, 8, 8 + len(body)) + bytes(body)
