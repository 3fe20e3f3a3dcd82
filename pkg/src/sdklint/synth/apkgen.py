"""Write synthetic APKs (plain ZIP archives) from a manifest and DEX files."""

from __future__ import annotations

import io
import os
import zipfile
from typing import Optional


class _Unseekable(io.RawIOBase):
    """Forces ``zipfile`` to emit data descriptors with zeroed local sizes."""

    def __init__(self, sink):
        self.sink = sink
        self.pos = 0

    def writable(self):
        return True

    def write(self, b):
        self.sink.write(b)
        self.pos += len(b)
        return len(b)

    def tell(self):
        return self.pos

    def seekable(self):
        return False

    def flush(self):
        pass


def _info(name):
    # fixed timestamp keeps archives byte-identical across runs
    return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))


def write_apk(path, manifest: bytes, dex_files, extra: Optional[dict] = None,
              compress: bool = True, data_descriptors: bool = False, prefix: bytes = b"") -> str:
    """``dex_files`` is a list of DEX blobs (classes.dex, classes2.dex, ...)
    or a dict of entry name to blob."""
    if not isinstance(dex_files, dict):
        dex_files = {("classes.dex" if i == 0 else f"classes{i + 1}.dex"): d
                     for i, d in enumerate(dex_files)}
    method = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    buf = io.BytesIO()
    target = _Unseekable(buf) if data_descriptors else buf
    with zipfile.ZipFile(target, "w", method) as zf:
        zf.writestr(_info("AndroidManifest.xml"), manifest, compress_type=method)
        for name, blob in dex_files.items():
            zf.writestr(_info(name), blob, compress_type=method)
        for name, blob in (extra or {}).items():
            zf.writestr(_info(name), blob, compress_type=zipfile.ZIP_STORED)
    data = buf.getvalue()
    if prefix:
        # offsets stay relative to the archive start; readers must compensate
        data = prefix + data
    path = os.fspath(path)
    with open(path, "wb") as fh:
        fh.write(data)
    return path
