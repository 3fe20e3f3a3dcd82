"""Binary AndroidManifest.xml (AXML) decoding and declared-SDK extraction."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Optional

from .errors import ManifestParseError

log = logging.getLogger(__name__)

RES_XML_TYPE = 0x0003
RES_STRING_POOL_TYPE = 0x0001
RES_XML_RESOURCE_MAP_TYPE = 0x0180
RES_XML_START_NAMESPACE_TYPE = 0x0100
RES_XML_END_NAMESPACE_TYPE = 0x0101
RES_XML_START_ELEMENT_TYPE = 0x0102
RES_XML_END_ELEMENT_TYPE = 0x0103
RES_XML_CDATA_TYPE = 0x0104

UTF8_FLAG = 0x100

# Res_value data types
TYPE_NULL = 0x00
TYPE_REFERENCE = 0x01
TYPE_ATTRIBUTE = 0x02
TYPE_STRING = 0x03
TYPE_INT_DEC = 0x10
TYPE_INT_HEX = 0x11
TYPE_INT_BOOLEAN = 0x12

ANDROID_NS = "http://schemas.android.com/apk/res/android"

ATTR_NAME = 0x01010003
ATTR_MIN_SDK = 0x0101020C
ATTR_TARGET_SDK = 0x01010270
ATTR_MAX_SDK = 0x01010271

COMPONENT_TAGS = ("activity", "service", "receiver", "provider")

NO_INDEX = 0xFFFFFFFF


@dataclass
class Attribute:
    name: str
    namespace: Optional[str]
    resource_id: Optional[int]
    value_type: int
    data: int
    raw: Optional[str]

    @property
    def value(self):
        """Python rendering of the typed value."""
        t = self.value_type
        if t == TYPE_STRING:
            return self.raw
        if t in (TYPE_INT_DEC, TYPE_INT_HEX):
            return self.data - (1 << 32) if self.data & 0x80000000 else self.data
        if t == TYPE_INT_BOOLEAN:
            return self.data != 0
        if self.raw is not None:
            return self.raw
        if t == TYPE_REFERENCE:
            return f"@{self.data:08x}"
        return self.data


@dataclass
class Element:
    tag: str
    namespace: Optional[str] = None
    attributes: list = field(default_factory=list)
    children: list = field(default_factory=list)

    def iter(self, tag=None):
        if tag is None or self.tag == tag:
            yield self
        for child in self.children:
            yield from child.iter(tag)

    def find_attr(self, resource_id: int, name: str) -> Optional[Attribute]:
        """Match by resource id first; fall back to the (android:) attribute name."""
        for attr in self.attributes:
            if attr.resource_id == resource_id:
                return attr
        for attr in self.attributes:
            if attr.resource_id is None and attr.name == name:
                return attr
        return None

    def get(self, name: str):
        for attr in self.attributes:
            if attr.name == name:
                return attr.value
        return None


def _string_pool(buf, off, header_size, chunk_size):
    if header_size < 28:
        raise ManifestParseError("string pool header too short", off)
    count, _styles, flags, strings_start, _ = struct.unpack_from("<IIIII", buf, off + 8)
    index_off = off + header_size
    if index_off + 4 * count > off + chunk_size:
        raise ManifestParseError("string pool index overruns chunk", off)
    offsets = struct.unpack_from(f"<{count}I", buf, index_off)
    base = off + strings_start
    end = off + chunk_size
    utf8 = bool(flags & UTF8_FLAG)
    strings = []
    for i, rel in enumerate(offsets):
        pos = base + rel
        if pos >= end:
            raise ManifestParseError(f"string {i} starts outside the pool", pos)
        try:
            strings.append(_read_utf8(buf, pos) if utf8 else _read_utf16(buf, pos))
        except (struct.error, IndexError):
            raise ManifestParseError(f"string {i} truncated", pos) from None
    return strings


def _read_utf8(buf, pos):
    # utf-16 length then utf-8 byte length, each 1 or 2 bytes
    n = buf[pos]
    pos += 2 if n & 0x80 else 1
    n = buf[pos]
    if n & 0x80:
        n = ((n & 0x7F) << 8) | buf[pos + 1]
        pos += 2
    else:
        pos += 1
    if pos + n > len(buf):
        raise IndexError
    return buf[pos:pos + n].decode("utf-8", errors="replace")


def _read_utf16(buf, pos):
    n = struct.unpack_from("<H", buf, pos)[0]
    pos += 2
    if n & 0x8000:
        n = ((n & 0x7FFF) << 16) | struct.unpack_from("<H", buf, pos)[0]
        pos += 2
    if pos + 2 * n > len(buf):
        raise IndexError
    return buf[pos:pos + 2 * n].decode("utf-16-le", errors="replace")


def decode_axml(data: bytes) -> Element:
    """Decode a binary XML document into an :class:`Element` tree."""
    buf = bytes(data)
    if len(buf) < 8:
        raise ManifestParseError("file shorter than the XML chunk header", 0)
    doc_type, doc_header, doc_size = struct.unpack_from("<HHI", buf, 0)
    if doc_type != RES_XML_TYPE:
        raise ManifestParseError(f"bad document chunk type {doc_type:#06x}", 0)
    end = min(doc_size, len(buf)) if doc_size >= 8 else len(buf)
    pos = doc_header if 8 <= doc_header <= end else 8

    strings: list = []
    resmap: tuple = ()
    ns_map: dict = {}
    root = None
    stack: list = []

    def string(idx):
        if idx == NO_INDEX:
            return None
        if idx >= len(strings):
            raise ManifestParseError(f"string index {idx} out of range", pos)
        return strings[idx]

    while pos + 8 <= end:
        ctype, header_size, size = struct.unpack_from("<HHI", buf, pos)
        if size < 8 or pos + size > end or header_size > size:
            raise ManifestParseError(f"truncated or malformed chunk {ctype:#06x}", pos)
        if ctype == RES_STRING_POOL_TYPE:
            strings = _string_pool(buf, pos, header_size, size)
        elif ctype == RES_XML_RESOURCE_MAP_TYPE:
            resmap = struct.unpack_from(f"<{(size - header_size) // 4}I", buf, pos + header_size)
        elif ctype == RES_XML_START_NAMESPACE_TYPE:
            prefix, uri = struct.unpack_from("<II", buf, pos + header_size)
            uri_s = string(uri)
            if uri_s is not None:
                ns_map[uri_s] = string(prefix)
        elif ctype == RES_XML_START_ELEMENT_TYPE:
            body = pos + header_size
            if body + 20 > pos + size:
                raise ManifestParseError("start-element chunk truncated", pos)
            ns, name, attr_start, attr_size, attr_count = struct.unpack_from("<IIHHH", buf, body)
            element = Element(string(name), string(ns))
            attr_pos = body + attr_start
            stride = attr_size or 20
            if attr_pos + stride * attr_count > pos + size or stride < 20:
                raise ManifestParseError("attribute records overrun chunk", pos)
            for _ in range(attr_count):
                a_ns, a_name, a_raw, _vsize, _res0, vtype, vdata = struct.unpack_from(
                    "<IIIHBBI", buf, attr_pos)
                rid = resmap[a_name] if a_name < len(resmap) and resmap[a_name] else None
                element.attributes.append(Attribute(
                    string(a_name) or "", string(a_ns), rid, vtype, vdata,
                    string(a_raw) if a_raw != NO_INDEX else
                    (string(vdata) if vtype == TYPE_STRING else None)))
                attr_pos += stride
            if stack:
                stack[-1].children.append(element)
            elif root is None:
                root = element
            else:
                log.warning("ignoring second root element <%s>", element.tag)
            stack.append(element)
        elif ctype == RES_XML_END_ELEMENT_TYPE:
            if not stack:
                raise ManifestParseError("end-element without matching start", pos)
            stack.pop()
        # namespace ends, CDATA and unknown chunks carry nothing we use
        pos += size

    if root is None:
        raise ManifestParseError("no elements in document", pos)
    return root


@dataclass
class ManifestInfo:
    package_name: str
    application_name: Optional[str] = None
    raw_min: list = field(default_factory=list)
    raw_target: Optional[int] = None
    raw_max: Optional[int] = None
    components: list = field(default_factory=list)  # [(kind, dotted class name)]
    warnings: list = field(default_factory=list)
    defined: dict = field(default_factory=dict)  # attribute -> present in manifest


def resolve_class_name(package: str, name: str) -> str:
    if name.startswith("."):
        return package + name
    if "." not in name:
        return f"{package}.{name}"
    return name


def _int_attr(attr: Attribute, warnings: list):
    if attr.value_type in (TYPE_INT_DEC, TYPE_INT_HEX):
        return attr.value
    warnings.append(
        f"uses-sdk {attr.name}: non-integer value {attr.value!r} (type {attr.value_type:#x}) treated as absent")
    return None


def parse_manifest(axml: bytes) -> ManifestInfo:
    root = decode_axml(axml)
    if root.tag != "manifest":
        raise ManifestParseError(f"root element is <{root.tag}>, expected <manifest>", 0)
    package = root.get("package")
    if not package or not isinstance(package, str):
        raise ManifestParseError("manifest has no package attribute", 0)
    info = ManifestInfo(package_name=package)
    sdk_defined = {"minSdkVersion": False, "targetSdkVersion": False, "maxSdkVersion": False}

    for uses_sdk in root.iter("uses-sdk"):
        for rid, name in ((ATTR_MIN_SDK, "minSdkVersion"), (ATTR_TARGET_SDK, "targetSdkVersion"),
                          (ATTR_MAX_SDK, "maxSdkVersion")):
            attr = uses_sdk.find_attr(rid, name)
            if attr is None:
                continue
            sdk_defined[name] = True
            value = _int_attr(attr, info.warnings)
            if value is None:
                continue
            if name == "minSdkVersion":
                info.raw_min.append(value)
            elif name == "targetSdkVersion":
                if info.raw_target is None:
                    info.raw_target = value
            elif info.raw_max is None:
                info.raw_max = value
    info.defined = sdk_defined

    for app in root.iter("application"):
        attr = app.find_attr(ATTR_NAME, "name")
        if attr is not None and attr.value_type == TYPE_STRING and attr.value:
            info.application_name = resolve_class_name(package, attr.value)
        for kind in COMPONENT_TAGS:
            for comp in app.iter(kind):
                attr = comp.find_attr(ATTR_NAME, "name")
                # reference-typed names would need resources.arsc to resolve
                if attr is None or attr.value_type != TYPE_STRING or not attr.value:
                    info.warnings.append(f"<{kind}> without a usable android:name")
                    continue
                info.components.append((kind, resolve_class_name(package, attr.value)))
        break
    return info


@dataclass(frozen=True)
class Dsdk:
    min: int
    target: int
    max: Optional[int] = None
    min_defaulted: bool = False
    target_defaulted: bool = False
    outlier: Optional[str] = None
    raw_min: tuple = ()
    raw_target: Optional[int] = None
    raw_max: Optional[int] = None

    def __post_init__(self):
        if self.target_defaulted and self.target != self.min:
            raise ValueError("defaulted target must equal min")


TARGET_ABOVE_KNOWN = "target_above_known_levels"
TARGET_BELOW_MIN = "target_below_min"


def effective_dsdk(info: ManifestInfo, max_known_level: Optional[int] = None) -> Dsdk:
    """Apply the platform defaults: min falls back to 1, target to min."""
    if info.raw_min:
        # a declared value below 1 behaves like 1 at install time
        min_level, min_defaulted = max(info.raw_min[0], 1), False
    else:
        min_level, min_defaulted = 1, True
    if info.raw_target is not None:
        target, target_defaulted = info.raw_target, False
    else:
        target, target_defaulted = min_level, True
    outlier = None
    if target < min_level:
        outlier = TARGET_BELOW_MIN
    elif max_known_level is not None and target > max_known_level:
        outlier = TARGET_ABOVE_KNOWN
    return Dsdk(min_level, target, info.raw_max, min_defaulted, target_defaulted,
                outlier, tuple(info.raw_min), info.raw_target, info.raw_max)


def _is_dotted_prefix(prefix: Optional[str], name: str) -> bool:
    return bool(prefix) and name.startswith(prefix + ".")


def root_classes(info: ManifestInfo) -> set:
    """Class-name prefixes whose code counts as reachable from a component.

    Components outside the app's own namespace contribute their full class
    name; the rest contribute their leading 3 name portions (2 for short names).
    """
    owners = [info.package_name]
    if info.application_name:
        owners.append(info.application_name)
        owners.append(info.application_name.rpartition(".")[0])
    roots = set()
    for _kind, cls in info.components:
        if not any(_is_dotted_prefix(p, cls) for p in owners):
            roots.add(cls)
            continue
        parts = cls.split(".")
        keep = max(2, min(3, len(parts) - 1))
        roots.add(".".join(parts[:keep]))
    return roots
