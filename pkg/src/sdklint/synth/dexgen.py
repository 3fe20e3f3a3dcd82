"""A small DEX assembler and writer for building test and demo apps.

Only what the analysis exercises is supported: classes with methods, a
handful of instruction forms, and symbolic references to methods, fields,
strings and types.  Output follows the on-disk rules (sorted id tables, map
list, checksum, signature) so that independent tools accept it.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

from ..apidb import MethodRef
from ..dex.parser import FieldRef

ACC_PUBLIC = 0x1
ACC_PRIVATE = 0x2
ACC_STATIC = 0x8
ACC_FINAL = 0x10
ACC_INTERFACE = 0x200
ACC_ABSTRACT = 0x400
ACC_CONSTRUCTOR = 0x10000

SDK_INT = FieldRef("Landroid/os/Build$VERSION;", "SDK_INT", "I")

_IF_OPCODE = {"eq": 0x32, "ne": 0x33, "lt": 0x34, "ge": 0x35, "gt": 0x36, "le": 0x37}
_INVOKE_OPCODE = {"virtual": 0x6E, "super": 0x6F, "direct": 0x70, "static": 0x71, "interface": 0x72}


def parse_signature(sig: str):
    """Split ``(IJLfoo;)V`` into (["I", "J", "Lfoo;"], "V")."""
    assert sig[0] == "("
    params = []
    i = 1
    while sig[i] != ")":
        j = i
        while sig[j] == "[":
            j += 1
        if sig[j] == "L":
            j = sig.index(";", j)
        params.append(sig[i:j + 1])
        i = j + 1
    return params, sig[i + 1:]


def _shorty_char(t):
    return "L" if t[0] in "L[" else t


def _s16(v):
    if not -0x8000 <= v <= 0x7FFF:
        raise ValueError(f"{v} does not fit 16 bits")
    return v & 0xFFFF


class Asm:
    """Symbolic instruction list; sizes are fixed before indices are known."""

    def __init__(self):
        self.items = []  # (size_in_units, encoder(ctx, pc) -> list[int], refs)
        self.labels = {}
        self._size = 0
        self.max_outs = 0

    # -- plumbing -------------------------------------------------------
    def _emit(self, size, encode, refs=()):
        self.items.append((self._size, size, encode, tuple(refs)))
        self._size += size
        return self

    @property
    def size(self):
        return self._size

    def label(self, name):
        if name in self.labels:
            raise ValueError(f"duplicate label {name}")
        self.labels[name] = self._size
        return self

    def refs(self):
        for _, _, _, refs in self.items:
            yield from refs

    def encode(self, ctx):
        out = []
        for pc, size, encode, _ in self.items:
            units = encode(ctx, pc)
            assert len(units) == size, (units, size)
            out.extend(units)
        return out

    def _rel(self, label, pc):
        if label not in self.labels:
            raise ValueError(f"undefined label {label}")
        return self.labels[label] - pc

    # -- instructions ---------------------------------------------------
    def nop(self):
        return self._emit(1, lambda c, pc: [0x0000])

    def raw(self, *units):
        units = list(units)
        return self._emit(len(units), lambda c, pc: units)

    def return_void(self):
        return self._emit(1, lambda c, pc: [0x000E])

    def return_value(self, reg):
        return self._emit(1, lambda c, pc: [0x0F | (reg << 8)])

    def const(self, reg, value, wide=False):
        if wide:
            if -0x8000 <= value <= 0x7FFF:
                return self._emit(2, lambda c, pc: [0x16 | (reg << 8), value & 0xFFFF])
            if -0x80000000 <= value <= 0x7FFFFFFF:
                v = value & 0xFFFFFFFF
                return self._emit(3, lambda c, pc: [0x17 | (reg << 8), v & 0xFFFF, v >> 16])
            v = value & 0xFFFFFFFFFFFFFFFF
            return self._emit(5, lambda c, pc: [0x18 | (reg << 8)] + [(v >> s) & 0xFFFF for s in (0, 16, 32, 48)])
        if reg < 16 and -8 <= value <= 7:
            return self._emit(1, lambda c, pc: [0x12 | (reg << 8) | ((value & 0xF) << 12)])
        if -0x8000 <= value <= 0x7FFF:
            return self._emit(2, lambda c, pc: [0x13 | (reg << 8), value & 0xFFFF])
        if value & 0xFFFF == 0:
            return self._emit(2, lambda c, pc: [0x15 | (reg << 8), (value >> 16) & 0xFFFF])
        v = value & 0xFFFFFFFF
        return self._emit(3, lambda c, pc: [0x14 | (reg << 8), v & 0xFFFF, v >> 16])

    def const_string(self, reg, text):
        return self._emit(2, lambda c, pc: [0x1A | (reg << 8), c.string_idx[text]], [("string", text)])

    def new_instance(self, reg, type_desc):
        return self._emit(2, lambda c, pc: [0x22 | (reg << 8), c.type_idx[type_desc]], [("type", type_desc)])

    def sget(self, reg, fref: FieldRef = SDK_INT):
        return self._emit(2, lambda c, pc: [0x60 | (reg << 8), c.field_idx[fref]], [("field", fref)])

    def sput(self, reg, fref: FieldRef):
        return self._emit(2, lambda c, pc: [0x67 | (reg << 8), c.field_idx[fref]], [("field", fref)])

    def iget(self, dst, obj, fref: FieldRef):
        return self._emit(2, lambda c, pc: [0x52 | (dst << 8) | (obj << 12), c.field_idx[fref]],
                          [("field", fref)])

    def move(self, dst, src):
        if dst < 16 and src < 16:
            return self._emit(1, lambda c, pc: [0x01 | (dst << 8) | (src << 12)])
        if dst < 256:
            return self._emit(2, lambda c, pc: [0x02 | (dst << 8), src])
        return self._emit(3, lambda c, pc: [0x03, dst, src])

    def move_result(self, reg):
        return self._emit(1, lambda c, pc: [0x0A | (reg << 8)])

    def add_int_lit8(self, dst, src, lit):
        return self._emit(2, lambda c, pc: [0xD8 | (dst << 8), src | ((lit & 0xFF) << 8)])

    def add_int(self, dst, a, b):
        return self._emit(2, lambda c, pc: [0x90 | (dst << 8), a | (b << 8)])

    def if_test(self, op, a, b, label):
        code = _IF_OPCODE[op]
        return self._emit(2, lambda c, pc: [code | (a << 8) | (b << 12), _s16(self._rel(label, pc))])

    def if_testz(self, op, a, label):
        code = _IF_OPCODE[op] + 6
        return self._emit(2, lambda c, pc: [code | (a << 8), _s16(self._rel(label, pc))])

    def goto(self, label):
        # always goto/16 so the layout does not depend on label distances
        return self._emit(2, lambda c, pc: [0x29, _s16(self._rel(label, pc))])

    def goto32(self, label):
        def enc(c, pc):
            rel = self._rel(label, pc) & 0xFFFFFFFF
            return [0x2A, rel & 0xFFFF, rel >> 16]
        return self._emit(3, enc)

    def invoke(self, kind, ref: MethodRef, *regs):
        """``kind`` is virtual/super/direct/static/interface, optionally "/range"."""
        rng = kind.endswith("/range")
        base = _INVOKE_OPCODE[kind.split("/")[0]]
        self.max_outs = max(self.max_outs, len(regs))
        if rng or len(regs) > 5:
            first = regs[0] if regs else 0
            if list(regs) != list(range(first, first + len(regs))):
                raise ValueError("range invoke needs consecutive registers")
            return self._emit(3, lambda c, pc: [(base + 6) | (len(regs) << 8), c.method_idx[ref], first],
                              [("method", ref)])
        r = list(regs) + [0] * (5 - len(regs))

        def enc(c, pc):
            return [base | (len(regs) << 12) | (r[4] << 8), c.method_idx[ref],
                    r[0] | (r[1] << 4) | (r[2] << 8) | (r[3] << 12)]
        return self._emit(3, enc, [("method", ref)])

    def fill_array_data(self, reg, label):
        def enc(c, pc):
            rel = self._rel(label, pc) & 0xFFFFFFFF
            return [0x26 | (reg << 8), rel & 0xFFFF, rel >> 16]
        return self._emit(3, enc)

    def align_payload(self):
        """Pad with a nop so the next item starts at an even code-unit offset."""
        if self._size % 2:
            self.nop()
        return self

    def array_payload(self, width, values):
        self.align_payload()
        body = b"".join(v.to_bytes(width, "little", signed=v < 0) for v in values)
        if len(body) % 2:
            body += b"\0"
        data_units = list(struct.unpack(f"<{len(body) // 2}H", body))
        n = len(values)
        units = [0x0300, width, n & 0xFFFF, n >> 16] + data_units
        return self._emit(len(units), lambda c, pc: units)

    def packed_switch(self, reg, label):
        def enc(c, pc):
            rel = self._rel(label, pc) & 0xFFFFFFFF
            return [0x2B | (reg << 8), rel & 0xFFFF, rel >> 16]
        return self._emit(3, enc)

    def packed_switch_payload(self, first_key, labels, switch_label):
        self.align_payload()

        def enc(c, pc):
            base = self.labels[switch_label]
            units = [0x0100, len(labels), first_key & 0xFFFF, (first_key >> 16) & 0xFFFF]
            for lab in labels:
                rel = (self.labels[lab] - base) & 0xFFFFFFFF
                units += [rel & 0xFFFF, rel >> 16]
            return units
        return self._emit(4 + 2 * len(labels), enc)

    def sparse_switch_payload(self, keys, labels, switch_label):
        self.align_payload()

        def enc(c, pc):
            base = self.labels[switch_label]
            units = [0x0200, len(keys)]
            for k in keys:
                units += [k & 0xFFFF, (k >> 16) & 0xFFFF]
            for lab in labels:
                rel = (self.labels[lab] - base) & 0xFFFFFFFF
                units += [rel & 0xFFFF, rel >> 16]
            return units
        return self._emit(2 + 4 * len(keys), enc)


@dataclass
class MethodSpec:
    name: str
    signature: str
    access: int = ACC_PUBLIC
    code: Optional[Asm] = None
    locals: int = 4


@dataclass
class ClassSpec:
    descriptor: str
    superclass: Optional[str] = "Ljava/lang/Object;"
    interfaces: tuple = ()
    access: int = ACC_PUBLIC
    methods: list = field(default_factory=list)

    def method(self, name, signature, code=None, access=ACC_PUBLIC, locals=4):
        if name in ("<init>", "<clinit>"):
            access |= ACC_CONSTRUCTOR
        spec = MethodSpec(name, signature, access, code, locals)
        self.methods.append(spec)
        return spec

    def ref(self, name, signature):
        return MethodRef(self.descriptor, name, signature)


class _Ctx:
    pass


def _uleb(v):
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _align(buf: bytearray, n=4):
    while len(buf) % n:
        buf.append(0)


class DexBuilder:
    def __init__(self, version: int = 35):
        self.version = version
        self.classes: list = []

    def add_class(self, descriptor, superclass="Ljava/lang/Object;", interfaces=(), access=ACC_PUBLIC):
        spec = ClassSpec(descriptor, superclass, tuple(interfaces), access)
        self.classes.append(spec)
        return spec

    # ------------------------------------------------------------------
    def build(self) -> bytes:
        strings, types, protos, fields_, methods = set(), set(), set(), set(), set()

        def add_type(t):
            types.add(t)
            strings.add(t)

        def add_proto(sig):
            params, ret = parse_signature(sig)
            for t in params + [ret]:
                add_type(t)
            shorty = _shorty_char(ret) + "".join(_shorty_char(p) for p in params)
            strings.add(shorty)
            protos.add(sig)

        def add_method(ref):
            add_type(ref.class_descriptor)
            strings.add(ref.method_name)
            add_proto(ref.signature)
            methods.add(ref)

        def add_field(fref):
            add_type(fref.class_descriptor)
            add_type(fref.type_descriptor)
            strings.add(fref.name)
            fields_.add(fref)

        for cls in self.classes:
            add_type(cls.descriptor)
            if cls.superclass:
                add_type(cls.superclass)
            for t in cls.interfaces:
                add_type(t)
            for m in cls.methods:
                add_method(MethodRef(cls.descriptor, m.name, m.signature))
                if m.code is not None:
                    for kind, value in m.code.refs():
                        if kind == "method":
                            add_method(value)
                        elif kind == "field":
                            add_field(value)
                        elif kind == "string":
                            strings.add(value)
                        elif kind == "type":
                            add_type(value)

        string_list = sorted(strings, key=lambda s: s.encode("utf-16-be", "surrogatepass"))
        string_idx = {s: i for i, s in enumerate(string_list)}
        type_list = sorted(types, key=lambda t: string_idx[t])
        type_idx = {t: i for i, t in enumerate(type_list)}

        def proto_key(sig):
            params, ret = parse_signature(sig)
            return (type_idx[ret], [type_idx[p] for p in params])
        proto_list = sorted(protos, key=proto_key)
        proto_idx = {p: i for i, p in enumerate(proto_list)}
        field_list = sorted(fields_, key=lambda f: (type_idx[f.class_descriptor], string_idx[f.name],
                                                    type_idx[f.type_descriptor]))
        field_idx = {f: i for i, f in enumerate(field_list)}
        method_list = sorted(methods, key=lambda m: (type_idx[m.class_descriptor],
                                                     string_idx[m.method_name], proto_idx[m.signature]))
        method_idx = {m: i for i, m in enumerate(method_list)}
        if len(method_list) > 0xFFFF or len(type_list) > 0xFFFF:
            raise ValueError("too many methods or types for one DEX file")

        ctx = _Ctx()
        ctx.string_idx, ctx.type_idx, ctx.field_idx, ctx.method_idx = string_idx, type_idx, field_idx, method_idx

        # class order: superclasses/interfaces defined here come first
        defined = {c.descriptor: c for c in self.classes}
        ordered, placed = [], set()

        def place(c, stack=()):
            if c.descriptor in placed:
                return
            if c.descriptor in stack:
                raise ValueError(f"cyclic class hierarchy at {c.descriptor}")
            for dep in (c.superclass, *c.interfaces):
                if dep in defined:
                    place(defined[dep], stack + (c.descriptor,))
            placed.add(c.descriptor)
            ordered.append(c)
        for c in self.classes:
            place(c)

        # -- layout ------------------------------------------------------
        header_size = 0x70
        off = header_size
        string_ids_off = off
        off += 4 * len(string_list)
        type_ids_off = off
        off += 4 * len(type_list)
        proto_ids_off = off
        off += 12 * len(proto_list)
        field_ids_off = off
        off += 8 * len(field_list)
        method_ids_off = off
        off += 8 * len(method_list)
        class_defs_off = off
        off += 32 * len(ordered)
        data_off = off

        data = bytearray()

        def pos():
            return data_off + len(data)

        # type lists
        type_list_offsets = {}
        needed_lists = set()
        for sig in proto_list:
            params, _ = parse_signature(sig)
            if params:
                needed_lists.add(tuple(params))
        for c in ordered:
            if c.interfaces:
                needed_lists.add(tuple(c.interfaces))
        type_lists_start = None
        for tl in sorted(needed_lists, key=lambda tl: [type_idx[t] for t in tl]):
            _align(data)
            if type_lists_start is None:
                type_lists_start = pos()
            type_list_offsets[tl] = pos()
            data += struct.pack("<I", len(tl))
            data += struct.pack(f"<{len(tl)}H", *(type_idx[t] for t in tl))
        _align(data)

        # code items
        code_offsets = {}
        code_start = pos() if any(m.code for c in ordered for m in c.methods) else None
        n_code = 0
        for c in ordered:
            for m in c.methods:
                if m.code is None:
                    continue
                _align(data)
                params, _ = parse_signature(m.signature)
                ins = sum(2 if p in ("J", "D") else 1 for p in params) + (0 if m.access & ACC_STATIC else 1)
                units = m.code.encode(ctx)
                code_offsets[(c.descriptor, m.name, m.signature)] = pos()
                data += struct.pack("<HHHHII", m.locals + ins, ins, m.code.max_outs, 0, 0, len(units))
                data += struct.pack(f"<{len(units)}H", *units)
                n_code += 1
        _align(data)

        # string data
        string_data_start = pos()
        string_data_offsets = []
        for s in string_list:
            string_data_offsets.append(pos())
            utf16_len = len(s.encode("utf-16-le", "surrogatepass")) // 2
            # MUTF-8: NUL as C0 80, supplementary characters as surrogate pairs
            halves = struct.unpack(f"<{utf16_len}H", s.encode("utf-16-le", "surrogatepass"))
            encoded = "".join(map(chr, halves)).encode("utf-8", "surrogatepass").replace(b"\x00", b"\xc0\x80")
            data += _uleb(utf16_len) + encoded + b"\0"

        # class data
        class_data_offsets = {}
        class_data_start = None
        n_class_data = 0
        for c in ordered:
            if not c.methods:
                continue
            if class_data_start is None:
                class_data_start = pos()
            class_data_offsets[c.descriptor] = pos()
            n_class_data += 1
            direct, virtual = [], []
            for m in c.methods:
                ref = MethodRef(c.descriptor, m.name, m.signature)
                is_direct = m.access & (ACC_STATIC | ACC_PRIVATE | ACC_CONSTRUCTOR)
                (direct if is_direct else virtual).append((method_idx[ref], m))
            direct.sort(key=lambda t: t[0])
            virtual.sort(key=lambda t: t[0])
            data += _uleb(0) + _uleb(0) + _uleb(len(direct)) + _uleb(len(virtual))
            for group in (direct, virtual):
                prev = 0
                for idx, m in group:
                    code_off = code_offsets.get((c.descriptor, m.name, m.signature), 0)
                    data += _uleb(idx - prev) + _uleb(m.access) + _uleb(code_off)
                    prev = idx

        _align(data)
        map_off = pos()
        map_items = [
            (0x0000, 1, 0),
            (0x0001, len(string_list), string_ids_off),
            (0x0002, len(type_list), type_ids_off),
            (0x0003, len(proto_list), proto_ids_off),
            (0x0004, len(field_list), field_ids_off),
            (0x0005, len(method_list), method_ids_off),
            (0x0006, len(ordered), class_defs_off),
            (0x1001, len(type_list_offsets), type_lists_start),
            (0x2001, n_code, code_start),
            (0x2002, len(string_list), string_data_start),
            (0x2000, n_class_data, class_data_start),
            (0x1000, 1, map_off),
        ]
        map_items = [(t, n, o) for t, n, o in map_items if n and o is not None]
        map_items.sort(key=lambda item: item[2])
        data += struct.pack("<I", len(map_items))
        for t, n, o in map_items:
            data += struct.pack("<HHII", t, 0, n, o)

        # -- id tables ---------------------------------------------------
        ids = bytearray()
        ids += struct.pack(f"<{len(string_list)}I", *string_data_offsets)
        ids += struct.pack(f"<{len(type_list)}I", *(string_idx[t] for t in type_list))
        for sig in proto_list:
            params, ret = parse_signature(sig)
            shorty = _shorty_char(ret) + "".join(_shorty_char(p) for p in params)
            ids += struct.pack("<III", string_idx[shorty], type_idx[ret],
                               type_list_offsets[tuple(params)] if params else 0)
        for f in field_list:
            ids += struct.pack("<HHI", type_idx[f.class_descriptor], type_idx[f.type_descriptor],
                               string_idx[f.name])
        for m in method_list:
            ids += struct.pack("<HHI", type_idx[m.class_descriptor], proto_idx[m.signature],
                               string_idx[m.method_name])
        NO_INDEX = 0xFFFFFFFF
        for c in ordered:
            ids += struct.pack(
                "<8I", type_idx[c.descriptor], c.access,
                type_idx[c.superclass] if c.superclass else NO_INDEX,
                type_list_offsets.get(tuple(c.interfaces), 0) if c.interfaces else 0,
                NO_INDEX, 0, class_data_offsets.get(c.descriptor, 0), 0)
        assert header_size + len(ids) == data_off

        file_size = data_off + len(data)
        header = bytearray(header_size)
        header[0:8] = b"dex\n" + f"{self.version:03d}".encode() + b"\0"
        struct.pack_into(
            "<20I", header, 0x20,
            file_size, header_size, 0x12345678, 0, 0, map_off,
            len(string_list), string_ids_off if string_list else 0,
            len(type_list), type_ids_off if type_list else 0,
            len(proto_list), proto_ids_off if proto_list else 0,
            len(field_list), field_ids_off if field_list else 0,
            len(method_list), method_ids_off if method_list else 0,
            len(ordered), class_defs_off if ordered else 0,
            len(data), data_off)
        out = header + ids + data
        out[12:32] = hashlib.sha1(bytes(out[32:])).digest()
        out[8:12] = struct.pack("<I", zlib.adler32(bytes(out[12:])))
        return bytes(out)
