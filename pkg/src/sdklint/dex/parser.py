"""DEX container parsing (versions 035 through 039)."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from ..apidb import MethodRef
from ..errors import DecodeError, DexParseError, UnsupportedDexError
from .insns import decode_stream, scan_stream, units_of

SUPPORTED_VERSIONS = (35, 36, 37, 38, 39)
ENDIAN_CONSTANT = 0x12345678
NO_INDEX = 0xFFFFFFFF
ACC_NATIVE = 0x100
ACC_ABSTRACT = 0x400

SDK_INT_FIELD = ("Landroid/os/Build$VERSION;", "SDK_INT", "I")

_HEADER = struct.Struct("<8sI20sIIIIIIIIIIIIIIIIIIII")
FRAMEWORK_PREFIXES = ("Landroid/", "Ljava/")


class FieldRef(NamedTuple):
    class_descriptor: str
    name: str
    type_descriptor: str


class MethodBody:
    """A method and its bytecode.

    ``invokes`` and ``reads_sdk_int`` come from a fast scan at parse time;
    the full instruction list is decoded on first access of ``instructions``.
    """

    __slots__ = ("owner", "ref", "access_flags", "code_unit_count", "registers", "invokes",
                 "reads_sdk_int", "_code", "_instructions")

    def __init__(self, owner: str, ref: MethodRef, access_flags: int, code_unit_count: int = 0,
                 registers: int = 0, invokes=(), reads_sdk_int: bool = False, code=None):
        self.owner = owner
        self.ref = ref
        self.access_flags = access_flags
        self.code_unit_count = code_unit_count
        self.registers = registers
        self.invokes = list(invokes)
        self.reads_sdk_int = reads_sdk_int
        self._code = code  # (units, start, method_refs, sdk_int_fields)
        self._instructions = None if code is not None else []

    @property
    def instructions(self) -> list:
        if self._instructions is None:
            units, start, method_refs, sdk_int_fields = self._code
            self._instructions = decode_stream(units, start, self.code_unit_count, method_refs, sdk_int_fields)
        return self._instructions

    @property
    def is_empty(self) -> bool:
        return self.code_unit_count == 0

    def __repr__(self):
        return f"MethodBody({self.ref}, units={self.code_unit_count}, invokes={len(self.invokes)})"


@dataclass
class ClassDef:
    descriptor: str
    superclass: Optional[str]
    interfaces: tuple = ()
    access_flags: int = 0
    methods: list = field(default_factory=list)

    @property
    def is_framework_stub(self) -> bool:
        return self.descriptor.startswith(FRAMEWORK_PREFIXES)


@dataclass
class DexImage:
    dex_version: int
    strings: list
    type_descriptors: list
    field_refs: list
    method_refs: list
    class_defs: list
    header: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def iter_methods(self):
        for cls in self.class_defs:
            yield from cls.methods


def _decode_mutf8(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        pass
    # Modified UTF-8: NUL as C0 80, supplementary chars as surrogate pairs.
    text = raw.replace(b"\xc0\x80", b"\x00").decode("utf-8", errors="surrogatepass")
    return text.encode("utf-16-le", errors="surrogatepass").decode("utf-16-le", errors="replace")


def _uleb128(data, pos):
    result = shift = 0
    while True:
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if b < 0x80:
            return result, pos
        shift += 7
        if shift > 28:
            raise DexParseError(f"uleb128 too long at offset {pos}")


def check_magic(data: bytes) -> int:
    if len(data) < 8 or data[:4] != b"dex\n" or data[7] != 0:
        raise UnsupportedDexError("not a DEX file (bad magic)")
    try:
        version = int(data[4:7])
    except ValueError:
        raise UnsupportedDexError(f"bad DEX version {data[4:7]!r}") from None
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedDexError(f"unsupported DEX version {version:03d}")
    return version


def parse_dex(data: bytes, name: Optional[str] = None) -> DexImage:
    """Materialize all tables of a DEX file and decode every method body."""
    data = bytes(data)
    version = check_magic(data)
    if len(data) < _HEADER.size:
        raise DexParseError("header truncated")
    (_, checksum, signature, file_size, header_size, endian_tag, _, _, _,
     string_ids_size, string_ids_off, type_ids_size, type_ids_off,
     proto_ids_size, proto_ids_off, field_ids_size, field_ids_off,
     method_ids_size, method_ids_off, class_defs_size, class_defs_off,
     data_size, data_off) = _HEADER.unpack_from(data, 0)
    if endian_tag != ENDIAN_CONSTANT:
        raise UnsupportedDexError(f"unsupported endian tag {endian_tag:#x}")
    header = {
        "checksum": checksum, "signature": signature.hex(), "file_size": file_size,
        "header_size": header_size, "string_ids_size": string_ids_size,
        "type_ids_size": type_ids_size, "proto_ids_size": proto_ids_size,
        "field_ids_size": field_ids_size, "method_ids_size": method_ids_size,
        "class_defs_size": class_defs_size, "data_size": data_size,
    }
    n = len(data)
    for what, off, count, width in (
        ("string_ids", string_ids_off, string_ids_size, 4),
        ("type_ids", type_ids_off, type_ids_size, 4),
        ("proto_ids", proto_ids_off, proto_ids_size, 12),
        ("field_ids", field_ids_off, field_ids_size, 8),
        ("method_ids", method_ids_off, method_ids_size, 8),
        ("class_defs", class_defs_off, class_defs_size, 32),
    ):
        if count and (off < _HEADER.size or off + count * width > n):
            raise DexParseError(f"{what} table out of bounds")
    warnings = []
    if file_size != n:
        warnings.append(f"header file_size {file_size} != actual size {n}")

    strings = []
    for off in struct.unpack_from(f"<{string_ids_size}I", data, string_ids_off):
        if off >= n:
            raise DexParseError(f"string data offset {off:#x} out of bounds")
        _, pos = _uleb128(data, off)
        end = data.find(b"\0", pos)
        if end < 0:
            raise DexParseError(f"unterminated string at {off:#x}")
        strings.append(_decode_mutf8(data[pos:end]))

    def string_at(idx):
        if idx >= string_ids_size:
            raise DexParseError(f"string index {idx} out of range")
        return strings[idx]

    types = [string_at(i) for i in struct.unpack_from(f"<{type_ids_size}I", data, type_ids_off)]

    def type_at(idx):
        if idx >= type_ids_size:
            raise DexParseError(f"type index {idx} out of range")
        return types[idx]

    type_lists = {}

    def type_list(off):
        if off == 0:
            return ()
        cached = type_lists.get(off)
        if cached is None:
            if off + 4 > n:
                raise DexParseError(f"type list offset {off:#x} out of bounds")
            size = struct.unpack_from("<I", data, off)[0]
            if off + 4 + 2 * size > n:
                raise DexParseError(f"type list at {off:#x} truncated")
            cached = tuple(type_at(i) for i in struct.unpack_from(f"<{size}H", data, off + 4))
            type_lists[off] = cached
        return cached

    protos = []
    for i in range(proto_ids_size):
        _, ret_idx, params_off = struct.unpack_from("<III", data, proto_ids_off + 12 * i)
        protos.append("(" + "".join(type_list(params_off)) + ")" + type_at(ret_idx))

    field_refs = []
    sdk_int_fields = set()
    for i in range(field_ids_size):
        cls_idx, type_idx, name_idx = struct.unpack_from("<HHI", data, field_ids_off + 8 * i)
        ref = FieldRef(type_at(cls_idx), string_at(name_idx), type_at(type_idx))
        field_refs.append(ref)
        if ref == SDK_INT_FIELD:
            sdk_int_fields.add(i)
    sdk_int_fields = frozenset(sdk_int_fields)

    method_refs = []
    for i in range(method_ids_size):
        cls_idx, proto_idx, name_idx = struct.unpack_from("<HHI", data, method_ids_off + 8 * i)
        if proto_idx >= proto_ids_size:
            raise DexParseError(f"proto index {proto_idx} out of range")
        method_refs.append(MethodRef(type_at(cls_idx), string_at(name_idx), protos[proto_idx]))

    units = units_of(data)
    class_defs = []
    seen = set()
    for i in range(class_defs_size):
        (cls_idx, access, super_idx, ifaces_off, _, _, class_data_off, _) = struct.unpack_from(
            "<8I", data, class_defs_off + 32 * i)
        descriptor = type_at(cls_idx)
        if descriptor in seen:
            warnings.append(f"duplicate class definition {descriptor} ignored")
            continue
        seen.add(descriptor)
        cls = ClassDef(
            descriptor,
            type_at(super_idx) if super_idx != NO_INDEX else None,
            type_list(ifaces_off),
            access,
        )
        if class_data_off:
            try:
                cls.methods = _class_methods(data, units, class_data_off, descriptor,
                                             method_refs, sdk_int_fields)
            except DecodeError as exc:
                raise DexParseError(str(exc), descriptor) from None
            except (IndexError, struct.error):
                raise DexParseError("class data truncated", descriptor) from None
        class_defs.append(cls)

    return DexImage(version, strings, types, field_refs, method_refs, class_defs, header, warnings)


def _class_methods(data, units, off, descriptor, method_refs, sdk_int_fields):
    n = len(data)
    if off >= n:
        raise DexParseError(f"class data offset {off:#x} out of bounds", descriptor)
    static_n, pos = _uleb128(data, off)
    instance_n, pos = _uleb128(data, pos)
    direct_n, pos = _uleb128(data, pos)
    virtual_n, pos = _uleb128(data, pos)
    for _ in range(2 * (static_n + instance_n)):
        _, pos = _uleb128(data, pos)
    methods = []
    for count in (direct_n, virtual_n):
        idx = 0
        for _ in range(count):
            diff, pos = _uleb128(data, pos)
            access, pos = _uleb128(data, pos)
            code_off, pos = _uleb128(data, pos)
            idx += diff
            if idx >= len(method_refs):
                raise DexParseError(f"method index {idx} out of range", descriptor)
            ref = method_refs[idx]
            if code_off == 0:
                methods.append(MethodBody(descriptor, ref, access))
                continue
            if code_off + 16 > n or code_off & 1:
                raise DexParseError(f"code item for {ref.method_name} out of bounds", descriptor)
            registers = struct.unpack_from("<H", data, code_off)[0]
            insns_size = struct.unpack_from("<I", data, code_off + 12)[0]
            if code_off + 16 + 2 * insns_size > n:
                raise DexParseError(f"code item for {ref.method_name} truncated", descriptor)
            start = (code_off + 16) >> 1
            invokes, reads_sdk = scan_stream(units, start, insns_size, method_refs, sdk_int_fields)
            methods.append(MethodBody(descriptor, ref, access, insns_size, registers, invokes, reads_sdk,
                                      (units, start, method_refs, sdk_int_fields)))
    return methods
