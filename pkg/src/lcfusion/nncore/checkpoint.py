"""Binary checkpoint serialization.

Byte layout (all integers little-endian unsigned 32-bit):

    offset 0   magic       4 bytes, b"LCF1"
    offset 4   version     uint32, currently 1
    offset 8   n_records   uint32
    then, per record, in file order:
        name_len   uint32
        name       name_len bytes of UTF-8
        ndim       uint32
        dims       ndim * uint32
        data       prod(dims) * 8 bytes of little-endian IEEE-754 float64

Records appear in the order they were passed in, so serialization of an
ordered mapping is byte-deterministic.
"""

import struct

import numpy as np

from ..errors import ValidationError

MAGIC = b"LCF1"
VERSION = 1


def dumps(records):
    """Serialize an ordered mapping name -> float64 ndarray."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def loads(blob):
    """Parse bytes produced by dumps back into an ordered dict."""
    if blob[:4] != MAGIC:
        raise ValidationError("checkpoint: bad magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValidationError(f"checkpoint: unsupported version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
        pos += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims).copy()
        pos += 8 * n
        out[name] = arr
    if pos != len(blob):
        raise ValidationError("checkpoint: trailing bytes")
    return out


def save(path, records):
    with open(path, "wb") as f:
        f.write(dumps(records))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
