"""MTSS container primitives (the wire format shared with the consumer).

Little-endian: magic "MTSS" | u32 version=1 | u32 N | u32 L | u32 D, then N
records of L*D float32 embeddings (time-major rows) followed by L mask
bytes. Total size is header + N * (4*L*D + L).
"""

import os
import struct

import numpy as np

MAGIC = b"MTSS"
VERSION = 1
HEADER = struct.Struct("<4sIIII")


class FormatError(ValueError):
    pass


def total_size(n, max_len, dim):
    return HEADER.size + n * (4 * max_len * dim + max_len)


class Writer:
    """Streams records in input order; header written up front from N."""

    def __init__(self, path, n, max_len, dim):
        self.path = path
        self.n = n
        self.max_len = max_len
        self.dim = dim
        self.written = 0
        self._fh = open(path, "wb")
        self._fh.write(HEADER.pack(MAGIC, VERSION, n, max_len, dim))

    def add(self, embedding, mask):
        emb = np.ascontiguousarray(embedding, dtype="<f4")
        msk = np.ascontiguousarray(mask, dtype=np.uint8)
        if emb.shape != (self.max_len, self.dim) or \
                msk.shape != (self.max_len,):
            raise FormatError(f"record {self.written}: embedding "
                              f"{emb.shape} / mask {msk.shape} do not match "
                              f"header (L={self.max_len}, D={self.dim})")
        self._fh.write(emb.tobytes())
        self._fh.write(msk.tobytes())
        self.written += 1

    def close(self):
        self._fh.close()
        if self.written != self.n:
            raise FormatError(f"{self.path}: header promised {self.n} "
                              f"records, wrote {self.written}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
        return False


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    magic, version, n, max_len, dim = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte "
                          f"offset 4")
    actual = os.path.getsize(path)
    expected = total_size(n, max_len, dim)
    if actual != expected:
        raise FormatError(f"{path}: file is {actual} bytes, header implies "
                          f"{expected}")
    return n, max_len, dim


def iter_records(path):
    n, max_len, dim = read_header(path)
    rec_bytes = 4 * max_len * dim
    with open(path, "rb") as fh:
        fh.seek(HEADER.size)
        for _ in range(n):
            emb = np.frombuffer(fh.read(rec_bytes), dtype="<f4")
            mask = np.frombuffer(fh.read(max_len), dtype=np.uint8)
            yield emb.reshape(max_len, dim), mask
