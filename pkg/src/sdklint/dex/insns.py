"""Dalvik instruction stream decoding.

Every instruction is walked for its length; only invokes, ``SDK_INT`` reads,
integer constants, conditional branches and register moves are decoded
semantically.  Everything else becomes ``other`` carrying its length and the
register it overwrites, which is all a forward register tracker needs.
"""

from __future__ import annotations

import struct
import sys
from array import array
from importlib import resources
from typing import NamedTuple, Optional

from ..errors import DecodeError

FORMAT_UNITS = {
    "10x": 1, "12x": 1, "11n": 1, "11x": 1, "10t": 1,
    "20t": 2, "22x": 2, "21t": 2, "21s": 2, "21h": 2, "21c": 2,
    "23x": 2, "22b": 2, "22t": 2, "22s": 2, "22c": 2,
    "30t": 3, "32x": 3, "31i": 3, "31t": 3, "31c": 3, "35c": 3, "3rc": 3,
    "45cc": 4, "4rcc": 4,
    "51l": 5,
}

# where the written register lives, by format
_DEST_NONE, _DEST_AA, _DEST_A4, _DEST_A16 = 0, 1, 2, 3
_DEST_FIELD = {"12x": _DEST_A4, "11n": _DEST_A4, "22t": _DEST_A4, "22s": _DEST_A4,
               "22c": _DEST_A4, "32x": _DEST_A16}

INVOKE = "invoke"
SGET_SDK_INT = "sget_sdk_int"
CONST = "const"
IF_TEST = "if_test"
MOVE = "move"
OTHER = "other"

IF_OPS = ("eq", "ne", "lt", "ge", "gt", "le")


class Opcode(NamedTuple):
    value: int
    name: str
    fmt: str
    units: int
    writes: int  # 0 none, 1 vA, 2 vA and vA+1


def _load_table():
    table = [None] * 256
    text = resources.files("sdklint.dex").joinpath("opcodes.tsv").read_text()
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        op, name, fmt, flag = line.split("\t")
        value = int(op, 16)
        table[value] = Opcode(value, name, fmt, FORMAT_UNITS[fmt], {"-": 0, "w": 1, "W": 2}[flag])
    return table


OPCODES = _load_table()


class DecodedInsn(NamedTuple):
    """One instruction.  Field use depends on ``kind``:

    invoke: ``ref`` target, ``op`` flavour ("virtual", "static/range", ...).
    sget_sdk_int: ``a`` destination register.
    const: ``a`` destination, ``value`` (None if it does not fit an int32).
    if_test: ``op`` comparison, ``a``/``b`` operands (``b`` None for the
    compare-with-zero forms), ``target`` branch offset.
    move: ``a`` destination, ``b`` source.
    other: ``a`` register written (if any); ``target`` for gotos.
    """

    offset: int
    length: int
    kind: str
    ref: object = None
    a: Optional[int] = None
    b: Optional[int] = None
    value: Optional[int] = None
    op: Optional[str] = None
    target: Optional[int] = None
    wide: bool = False
    opcode: int = 0


# NamedTuple.__new__ is a Python-level function; the tuple constructor skips a frame
_new = tuple.__new__

# semantic classes for the hot loop
_S_OTHER, _S_INVOKE, _S_INVOKE_RANGE, _S_SGET, _S_CONST, _S_IF, _S_IFZ, _S_MOVE, _S_GOTO = range(9)

_LEN = [0] * 256
_SEM = [_S_OTHER] * 256
_DEST = [_DEST_NONE] * 256
_WIDE = [False] * 256
_INVOKE_NAME = [None] * 256
for _op in OPCODES:
    if _op is None:
        continue
    v = _op.value
    _LEN[v] = _op.units
    if _op.writes:
        _DEST[v] = _DEST_FIELD.get(_op.fmt, _DEST_AA)
        _WIDE[v] = _op.writes == 2
    if 0x6E <= v <= 0x72:
        _SEM[v] = _S_INVOKE
        _INVOKE_NAME[v] = _op.name[len("invoke-"):]
    elif 0x74 <= v <= 0x78:
        _SEM[v] = _S_INVOKE_RANGE
        _INVOKE_NAME[v] = _op.name[len("invoke-"):]
    elif 0x60 <= v <= 0x66:
        _SEM[v] = _S_SGET
    elif 0x12 <= v <= 0x19:
        _SEM[v] = _S_CONST
    elif 0x32 <= v <= 0x37:
        _SEM[v] = _S_IF
    elif 0x38 <= v <= 0x3D:
        _SEM[v] = _S_IFZ
    elif v in (0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09):
        _SEM[v] = _S_MOVE
    elif v in (0x28, 0x29, 0x2A):
        _SEM[v] = _S_GOTO


def _s16(x):
    return x - 0x10000 if x & 0x8000 else x


def _s32(x):
    return x - 0x100000000 if x & 0x80000000 else x


def _narrow(x):
    return x if -0x80000000 <= x <= 0x7FFFFFFF else None


def decode_stream(units, start, count, method_refs=None, sdk_int_fields=frozenset()):
    """Decode ``count`` code units of ``units`` beginning at index ``start``.

    ``method_refs`` maps method indices to references (raw indices are kept
    when it is None); ``sdk_int_fields`` holds the field indices that name
    ``Build.VERSION.SDK_INT``.  Offsets in the result are relative to ``start``.
    """
    out = []
    append = out.append
    LEN, SEM, DEST, WIDE = _LEN, _SEM, _DEST, _WIDE
    end = start + count
    if end > len(units):
        raise DecodeError("code extends past end of file", 0)
    pc = start
    while pc < end:
        u = units[pc]
        op = u & 0xFF
        ln = LEN[op]
        off = pc - start
        if op == 0 and u != 0:
            ln = _payload_length(units, pc, end, off)
            append(_new(DecodedInsn, (off, ln, OTHER, None, None, None, None, "payload", None, False, 0)))
            pc += ln
            continue
        if ln == 0:
            raise DecodeError(f"unknown opcode {op:#04x}", off)
        if pc + ln > end:
            raise DecodeError(f"instruction {OPCODES[op].name} runs past end of code", off)
        sem = SEM[op]
        if sem == _S_OTHER:
            d = DEST[op]
            if d == _DEST_NONE:
                append(_new(DecodedInsn, (off, ln, OTHER, None, None, None, None, None, None, False, op)))
            else:
                a = u >> 8 if d == _DEST_AA else ((u >> 8) & 0xF if d == _DEST_A4 else units[pc + 1])
                append(_new(DecodedInsn, (off, ln, OTHER, None, a, None, None, None, None, WIDE[op], op)))
        elif sem == _S_INVOKE or sem == _S_INVOKE_RANGE:
            idx = units[pc + 1]
            if method_refs is None:
                ref = idx
            else:
                try:
                    ref = method_refs[idx]
                except IndexError:
                    raise DecodeError(f"method index {idx} out of range", off) from None
            append(_new(DecodedInsn, (off, ln, INVOKE, ref, None, None, None, _INVOKE_NAME[op], None, False, op)))
        elif sem == _S_SGET:
            a = u >> 8
            if units[pc + 1] in sdk_int_fields:
                append(_new(DecodedInsn, (off, ln, SGET_SDK_INT, None, a, None, None, None, None, False, op)))
            else:
                append(_new(DecodedInsn, (off, ln, OTHER, None, a, None, None, None, None, WIDE[op], op)))
        elif sem == _S_CONST:
            if op == 0x12:
                a = (u >> 8) & 0xF
                value = u >> 12
                if value & 0x8:
                    value -= 16
            else:
                a = u >> 8
                if op == 0x13 or op == 0x16:
                    value = _s16(units[pc + 1])
                elif op == 0x14 or op == 0x17:
                    value = _s32(units[pc + 1] | (units[pc + 2] << 16))
                elif op == 0x15:
                    value = _s32(units[pc + 1] << 16)
                elif op == 0x18:
                    raw = (units[pc + 1] | (units[pc + 2] << 16) | (units[pc + 3] << 32)
                           | (units[pc + 4] << 48))
                    value = _narrow(raw - (1 << 64) if raw >> 63 else raw)
                else:  # const-wide/high16
                    raw = units[pc + 1] << 48
                    value = _narrow(raw - (1 << 64) if raw >> 63 else raw)
            append(_new(DecodedInsn, (off, ln, CONST, None, a, None, value, None, None, op >= 0x16, op)))
        elif sem == _S_IF:
            append(_new(DecodedInsn, (off, ln, IF_TEST, None, (u >> 8) & 0xF, u >> 12, None,
                                      IF_OPS[op - 0x32], off + _s16(units[pc + 1]), False, op)))
        elif sem == _S_IFZ:
            append(_new(DecodedInsn, (off, ln, IF_TEST, None, u >> 8, None, None,
                                      IF_OPS[op - 0x38], off + _s16(units[pc + 1]), False, op)))
        elif sem == _S_MOVE:
            if ln == 1:
                a, b = (u >> 8) & 0xF, u >> 12
            elif ln == 2:
                a, b = u >> 8, units[pc + 1]
            else:
                a, b = units[pc + 1], units[pc + 2]
            append(_new(DecodedInsn, (off, ln, MOVE, None, a, b, None, None, None, WIDE[op], op)))
        else:  # goto family
            if op == 0x28:
                rel = u >> 8
                if rel & 0x80:
                    rel -= 0x100
            elif op == 0x29:
                rel = _s16(units[pc + 1])
            else:
                rel = _s32(units[pc + 1] | (units[pc + 2] << 16))
            append(_new(DecodedInsn, (off, ln, OTHER, None, None, None, None, "goto", off + rel, False, op)))
        pc += ln
    return out


def _payload_length(units, pc, end, off):
    ident = units[pc] >> 8
    ln = 0
    if ident == 0x01:  # packed-switch-payload
        ln = units[pc + 1] * 2 + 4 if pc + 1 < end else 0
    elif ident == 0x02:  # sparse-switch-payload
        ln = units[pc + 1] * 4 + 2 if pc + 1 < end else 0
    elif ident == 0x03:  # fill-array-data-payload
        if pc + 3 < end:
            width = units[pc + 1]
            size = units[pc + 2] | (units[pc + 3] << 16)
            ln = (size * width + 1) // 2 + 4
    if ln == 0:
        raise DecodeError("truncated payload", off)
    if pc + ln > end:
        raise DecodeError("payload runs past end of code", off)
    return ln


def scan_stream(units, start, count, method_refs=None, sdk_int_fields=frozenset()):
    """Fast pass over a method: (invoke instructions, reads SDK_INT).

    Applies the same validity checks as :func:`decode_stream`, so a method
    that scans cleanly also decodes cleanly.  The invokes are the same
    :class:`DecodedInsn` values the full decoder would produce.
    """
    invokes = []
    append = invokes.append
    LEN, SEM = _LEN, _SEM
    end = start + count
    if end > len(units):
        raise DecodeError("code extends past end of file", 0)
    reads_sdk = False
    pc = start
    while pc < end:
        u = units[pc]
        op = u & 0xFF
        if op == 0 and u != 0:
            pc += _payload_length(units, pc, end, pc - start)
            continue
        ln = LEN[op]
        if ln == 0:
            raise DecodeError(f"unknown opcode {op:#04x}", pc - start)
        if pc + ln > end:
            raise DecodeError(f"instruction {OPCODES[op].name} runs past end of code", pc - start)
        sem = SEM[op]
        if sem == _S_INVOKE or sem == _S_INVOKE_RANGE:
            idx = units[pc + 1]
            if method_refs is None:
                ref = idx
            else:
                try:
                    ref = method_refs[idx]
                except IndexError:
                    raise DecodeError(f"method index {idx} out of range", pc - start) from None
            append(_new(DecodedInsn, (pc - start, ln, INVOKE, ref, None, None, None, _INVOKE_NAME[op], None,
                                      False, op)))
        elif sem == _S_SGET and not reads_sdk:
            reads_sdk = units[pc + 1] in sdk_int_fields
        pc += ln
    return invokes, reads_sdk


def units_of(data: bytes) -> array:
    """View little-endian bytes as 16-bit code units (padded to even length)."""
    if len(data) & 1:
        data = bytes(data) + b"\0"
    units = array("H")
    units.frombytes(data)
    if sys.byteorder == "big":
        units.byteswap()
    return units


def walk_instructions(code_item: bytes, method_refs=None, sdk_int_fields=frozenset()):
    """Decode a complete ``code_item`` (16-byte header followed by insns)."""
    if len(code_item) < 16:
        raise DecodeError("code item header truncated", 0)
    insns_size = struct.unpack_from("<I", code_item, 12)[0]
    if 16 + 2 * insns_size > len(code_item):
        raise DecodeError("code item shorter than insns_size", 0)
    units = units_of(code_item[16:16 + 2 * insns_size])
    return decode_stream(units, 0, insns_size, method_refs, sdk_int_fields)
