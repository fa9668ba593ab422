"""Binary array containers.

One little-endian layout shared by model checkpoints, NMF dictionaries and
embedding files: 4-byte magic, u32 format version, u32 array count, then per
array a u32 ndim, ndim u64 dims, and the float64 payload in C order.
"""

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1

# Magic tags for the three container roles.
MAGIC_CHECKPOINT = b"AVSC"
MAGIC_MATRICES = b"AVSM"
MAGIC_EMBEDDING = b"AVSE"


def write_arrays(path, magic: bytes, arrays: Sequence[np.ndarray]) -> None:
    """Write `arrays` to `path` under the 4-byte `magic` tag."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes, got %r" % (magic,))
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
        for arr in arrays:
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack("<%dQ" % arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def read_arrays(path, magic: bytes) -> list[np.ndarray]:
    """Read back a container written by write_arrays, checking magic and version."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError("cannot read %s: %s" % (path, exc)) from exc
    if len(blob) < 12:
        raise DataError("%s: truncated container header" % path)
    if blob[:4] != magic:
        raise DataError(
            "%s: bad magic %r (expected %r)" % (path, bytes(blob[:4]), magic)
        )
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError("%s: unsupported format version %d" % (path, version))
    offset = 12
    arrays = []
    for _ in range(count):
        if offset + 4 > len(blob):
            raise DataError("%s: truncated array header" % path)
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if ndim > 8:
            raise DataError("%s: implausible ndim %d" % (path, ndim))
        if offset + 8 * ndim > len(blob):
            raise DataError("%s: truncated dims" % path)
        shape = struct.unpack_from("<%dQ" % ndim, blob, offset)
        offset += 8 * ndim
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        n_bytes = 8 * n_items
        if offset + n_bytes > len(blob):
            raise DataError("%s: truncated array payload" % path)
        arr = np.frombuffer(blob, dtype="<f8", count=n_items, offset=offset)
        arrays.append(arr.reshape(shape).copy())
        offset += n_bytes
    if offset != len(blob):
        raise DataError("%s: %d trailing bytes" % (path, len(blob) - offset))
    return arrays
