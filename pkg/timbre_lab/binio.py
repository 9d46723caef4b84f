"""
Little-endian binary framing for mel files and model checkpoints.

All artifacts share the same shape: an 8-byte ASCII magic, a table of
unsigned header fields, then float32 blocks in row-major order.
"""
import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from timbre_lab.errors import ArtifactFormatError

FLOAT_DTYPE = np.dtype("<f4")


def as_float32_values(values):
    """Round values to float32 precision, returned as float64."""
    return np.asarray(values, dtype=np.float64).astype(FLOAT_DTYPE).astype(np.float64)


class Writer:
    """Accumulates header fields and float blocks into one byte string"""

    def __init__(self, magic):
        if len(magic) != 8:
            raise ValueError(f"Magic must be 8 bytes, got {magic!r}")
        self._parts = [magic]

    def u32(self, *values):
        self._parts.append(struct.pack(f"<{len(values)}I", *[int(v) for v in values]))
        return self

    def u64(self, *values):
        self._parts.append(struct.pack(f"<{len(values)}Q", *[int(v) & 0xFFFFFFFFFFFFFFFF for v in values]))
        return self

    def floats(self, array):
        self._parts.append(np.ascontiguousarray(array, dtype=FLOAT_DTYPE).tobytes())
        return self

    def blob(self, data):
        """u64 length followed by raw bytes"""
        self.u64(len(data))
        self._parts.append(bytes(data))
        return self

    def getvalue(self):
        return b"".join(self._parts)


class Reader:
    """Cursor over an artifact's bytes; every read validates remaining length"""

    def __init__(self, data, magic, what="artifact"):
        self._data = data
        self._what = what
        if data[:8] != magic:
            raise ArtifactFormatError(f"{what}: bad magic {data[:8]!r}, expected {magic!r}")
        self._offset = 8

    def _take(self, size):
        end = self._offset + size
        if end > len(self._data):
            raise ArtifactFormatError(
                f"{self._what}: truncated at byte {self._offset} (needed {size} more bytes)"
            )
        chunk = self._data[self._offset:end]
        self._offset = end
        return chunk

    def u32(self, count=1):
        values = struct.unpack(f"<{count}I", self._take(4 * count))
        return values[0] if count == 1 else list(values)

    def u64(self, count=1):
        values = struct.unpack(f"<{count}Q", self._take(8 * count))
        return values[0] if count == 1 else list(values)

    def floats(self, shape):
        n = int(np.prod(shape)) if len(shape) else 1
        raw = np.frombuffer(self._take(4 * n), dtype=FLOAT_DTYPE)
        return raw.astype(np.float64).reshape(shape)

    def blob(self):
        return bytes(self._take(self.u64()))

    def finish(self):
        if self._offset != len(self._data):
            raise ArtifactFormatError(
                f"{self._what}: {len(self._data) - self._offset} trailing bytes after payload"
            )


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    """Hex sha256 of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path, data):
    """
    Write bytes via a temporary sibling file and rename.

    Args:
        path: Destination path; parent directories are created
        data (bytes): Payload

    Returns:
        Path: The destination path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode("utf-8"))
