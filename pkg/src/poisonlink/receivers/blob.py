"""Versioned little-endian parameter blobs.

Layout: magic ``PLNKBLOB``, u16 version, length-prefixed utf-8 architecture
name, u32 entry count, then per entry a length-prefixed name, u32 ndim,
ndim x u64 dims and the flat float64 payload.
"""

import struct

import numpy as np

MAGIC = b"PLNKBLOB"
VERSION = 1


class CompatibilityError(ValueError):
    pass


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode(kind, entries):
    parts = [MAGIC, struct.pack("<H", VERSION), _pack_str(kind), struct.pack("<I", len(entries))]
    for name, arr in entries:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CompatibilityError("truncated parameter blob")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        return bytes(self.take(n)).decode("utf-8")


def decode(blob):
    """Return (kind, [(name, ndarray), ...])."""
    r = _Reader(blob)
    if bytes(r.take(len(MAGIC))) != MAGIC:
        raise CompatibilityError("not a parameter blob")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CompatibilityError(f"blob version {version}, expected {VERSION}")
    kind = r.string()
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        name = r.string()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(bytes(r.take(8 * n)), dtype="<f8").reshape(shape).astype(np.float64)
        entries.append((name, arr))
    if r.pos != len(r.buf):
        raise CompatibilityError("trailing bytes after parameter blob")
    return kind, entries
