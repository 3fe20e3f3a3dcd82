"""APK container access: the binary manifest and the root-level DEX files.

APKs are ZIP archives, but real-world toolchains produce archives that
strict readers reject (data descriptors with zeroed local sizes, bogus
general-purpose flags, lying local headers).  Only the central directory is
trusted for sizes and offsets; the local header is consulted just to find
where the payload starts.
"""

from __future__ import annotations

import os
import re
import struct
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ContainerError, MissingBytecodeError, MissingManifestError

MANIFEST_NAME = "AndroidManifest.xml"
_DEX_RE = re.compile(r"^classes([2-9]|[1-9][0-9]+)?\.dex$")

_EOCD_SIG = b"PK\x05\x06"
_ZIP64_LOCATOR_SIG = b"PK\x06\x07"
_ZIP64_EOCD_SIG = b"PK\x06\x06"
_CDIR_SIG = 0x02014B50
_LOCAL_SIG = 0x04034B50
_EOCD = struct.Struct("<4sHHHHIIH")
_CDIR = struct.Struct("<IHHHHHHIIIHHHHHII")
_LOCAL = struct.Struct("<IHHHHHIIIHH")


class ZipEntry(NamedTuple):
    name: str
    method: int
    flags: int
    crc: int
    compressed_size: int
    size: int
    header_offset: int


@dataclass
class ApkContents:
    path: str
    manifest: bytes
    dex_entries: list  # [(entry_name, bytes)] in classes, classes2, ... order
    apk_bytes: int = 0
    warnings: list = field(default_factory=list)

    @property
    def total_dex_bytes(self) -> int:
        return sum(len(data) for _, data in self.dex_entries)


def dex_index(name: str):
    """1 for ``classes.dex``, N for ``classesN.dex``; None for anything else."""
    m = _DEX_RE.match(name)
    if m is None:
        return None
    return int(m.group(1)) if m.group(1) else 1


def _find_eocd(buf: bytes) -> int:
    # comment is at most 0xFFFF bytes
    start = max(0, len(buf) - (_EOCD.size + 0xFFFF))
    pos = buf.rfind(_EOCD_SIG, start)
    while pos >= 0:
        if pos + _EOCD.size <= len(buf):
            comment_len = struct.unpack_from("<H", buf, pos + 20)[0]
            if pos + _EOCD.size + comment_len <= len(buf):
                return pos
        pos = buf.rfind(_EOCD_SIG, start, pos)
    raise ContainerError("not a ZIP archive (no end-of-central-directory record)")


def read_central_directory(buf: bytes) -> list:
    """List the archive's entries from the central directory."""
    eocd = _find_eocd(buf)
    _, _, _, _, count, cd_size, cd_offset, _ = _EOCD.unpack_from(buf, eocd)
    if count == 0xFFFF or cd_offset == 0xFFFFFFFF:
        loc = eocd - 20
        if loc >= 0 and buf[loc:loc + 4] == _ZIP64_LOCATOR_SIG:
            z64 = struct.unpack_from("<Q", buf, loc + 8)[0]
            if buf[z64:z64 + 4] != _ZIP64_EOCD_SIG:
                raise ContainerError("corrupt ZIP64 end-of-central-directory record")
            count, _, cd_size, cd_offset = struct.unpack_from("<QQQQ", buf, z64 + 24)
    # Prepended data (self-extracting stubs) shifts every offset by a constant.
    shift = eocd - (cd_offset + cd_size)
    if shift < 0 or buf[cd_offset + shift:cd_offset + shift + 4] != struct.pack("<I", _CDIR_SIG):
        shift = 0
    pos = cd_offset + shift
    entries = []
    for _ in range(count):
        if pos + _CDIR.size > len(buf):
            raise ContainerError("central directory truncated")
        (sig, _, _, flags, method, _, _, crc, csize, usize, name_len, extra_len,
         comment_len, _, _, _, hdr_off) = _CDIR.unpack_from(buf, pos)
        if sig != _CDIR_SIG:
            raise ContainerError(f"bad central directory signature at offset {pos}")
        raw_name = buf[pos + _CDIR.size:pos + _CDIR.size + name_len]
        name = raw_name.decode("utf-8" if flags & 0x800 else "cp437", errors="replace")
        if 0xFFFFFFFF in (csize, usize, hdr_off):
            csize, usize, hdr_off = _zip64_sizes(
                buf, pos + _CDIR.size + name_len, extra_len, csize, usize, hdr_off)
        entries.append(ZipEntry(name, method, flags, crc, csize, usize, hdr_off + shift))
        pos += _CDIR.size + name_len + extra_len + comment_len
    return entries


def _zip64_sizes(buf, pos, length, csize, usize, hdr_off):
    end = pos + length
    while pos + 4 <= end:
        tag, size = struct.unpack_from("<HH", buf, pos)
        if tag == 0x0001:
            values = iter(struct.unpack_from(f"<{size // 8}Q", buf, pos + 4))
            if usize == 0xFFFFFFFF:
                usize = next(values)
            if csize == 0xFFFFFFFF:
                csize = next(values)
            if hdr_off == 0xFFFFFFFF:
                hdr_off = next(values)
            break
        pos += 4 + size
    return csize, usize, hdr_off


def read_entry(buf: bytes, entry: ZipEntry, warnings=None) -> bytes:
    """Return the uncompressed payload of ``entry``."""
    off = entry.header_offset
    if off + _LOCAL.size > len(buf):
        raise ContainerError("local header out of range", entry.name)
    sig = struct.unpack_from("<I", buf, off)[0]
    if sig != _LOCAL_SIG:
        raise ContainerError("bad local header signature", entry.name)
    name_len, extra_len = struct.unpack_from("<HH", buf, off + 26)
    start = off + _LOCAL.size + name_len + extra_len
    raw = buf[start:start + entry.compressed_size]
    if len(raw) != entry.compressed_size:
        raise ContainerError("entry data truncated", entry.name)
    if entry.method == 0:
        data = bytes(raw)
    elif entry.method == 8:
        try:
            inflater = zlib.decompressobj(-15)
            data = inflater.decompress(raw) + inflater.flush()
        except zlib.error as exc:
            raise ContainerError(f"inflate failed: {exc}", entry.name) from None
    else:
        raise ContainerError(f"unsupported compression method {entry.method}", entry.name)
    if len(data) != entry.size:
        raise ContainerError(
            f"size mismatch: expected {entry.size} bytes, got {len(data)}", entry.name)
    if zlib.crc32(data) != entry.crc and warnings is not None:
        warnings.append(f"{entry.name}: CRC mismatch")
    return data


def open_apk(path) -> ApkContents:
    """Read ``AndroidManifest.xml`` and every root ``classes*.dex`` from an APK."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc.strerror}") from None
    entries = read_central_directory(buf)
    warnings = []
    manifest_entry = None
    dex = {}
    for entry in entries:
        if entry.name == MANIFEST_NAME:
            if manifest_entry is None:
                manifest_entry = entry
            else:
                warnings.append(f"duplicate {MANIFEST_NAME} entry ignored")
            continue
        idx = dex_index(entry.name)
        if idx is not None:
            if idx in dex:
                warnings.append(f"duplicate {entry.name} entry ignored")
            else:
                dex[idx] = entry
    if manifest_entry is None:
        raise MissingManifestError(f"{MANIFEST_NAME} not found in {path}")
    if not dex:
        raise MissingBytecodeError(f"no classes*.dex entries in {path}")
    manifest = read_entry(buf, manifest_entry, warnings)
    if not manifest:
        raise MissingManifestError(f"{MANIFEST_NAME} is empty in {path}")
    dex_entries = [(dex[i].name, read_entry(buf, dex[i], warnings)) for i in sorted(dex)]
    return ApkContents(path, manifest, dex_entries, len(buf), warnings)
