"""Binary checkpoint container for named parameter tensors.

Layout (little-endian): magic "MTSK" | u32 version | u32 tensor_count |
tensors | u32 config_len | config utf-8 | zero or more trailing sections.
Each tensor: u16 name_len | name utf-8 | u8 rank | u32 dims... | f32 data.
Each section: u16 name_len | name utf-8 | u64 payload_len | payload.

Unknown trailing sections are skipped with a warning, which is what keeps
the format forward-compatible within a major version. Data is always f32;
saving from a float64 model narrows (and warns at the call site).
"""

import struct

import numpy as np

from .errors import DataFormatError

MAGIC = b"MTSK"
VERSION = 1

SECTION_ADAM = "adam"
SECTION_META = "meta"


def _pack_tensor(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    raw = name.encode("utf-8")
    parts = [struct.pack("<H", len(raw)), raw,
             struct.pack("<B", arr.ndim)]
    parts.extend(struct.pack("<I", d) for d in arr.shape)
    parts.append(arr.tobytes())
    return b"".join(parts)


def pack_tensor_block(tensors):
    """tensors: iterable of (name, array) -> bytes with a u32 count prefix."""
    tensors = list(tensors)
    parts = [struct.pack("<I", len(tensors))]
    parts.extend(_pack_tensor(name, arr) for name, arr in tensors)
    return b"".join(parts)


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.blob):
            raise DataFormatError(
                f"{self.path}: truncated while reading {what} at byte offset "
                f"{self.off} (need {n} bytes, {len(self.blob) - self.off} "
                f"left)")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    @property
    def remaining(self):
        return len(self.blob) - self.off


def unpack_tensor_block(reader):
    count = reader.u32("tensor count")
    tensors = []
    for i in range(count):
        nlen = reader.u16(f"tensor {i} name length")
        name = reader.take(nlen, f"tensor {i} name").decode("utf-8")
        rank = reader.take(1, f"{name} rank")[0]
        dims = tuple(reader.u32(f"{name} dim {d}") for d in range(rank))
        n_items = int(np.prod(dims)) if dims else 1
        raw = reader.take(4 * n_items, f"{name} data")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims)
        tensors.append((name, arr.copy()))
    return tensors


def save_checkpoint(path, tensors, config_text, sections=None):
    """tensors: ordered (name, array); sections: name -> payload bytes."""
    cfg_raw = config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), pack_tensor_block(tensors),
             struct.pack("<I", len(cfg_raw)), cfg_raw]
    for name in sorted(sections or {}):
        raw = name.encode("utf-8")
        payload = sections[name]
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class Checkpoint:
    def __init__(self, version, tensors, config_text, sections, warnings):
        self.version = version
        self.tensors = tensors  # ordered list of (name, f32 array)
        self.config_text = config_text
        self.sections = sections  # name -> payload bytes (known ones only)
        self.warnings = warnings

    def tensor_dict(self):
        return dict(self.tensors)


KNOWN_SECTIONS = (SECTION_ADAM, SECTION_META)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob, path)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    version = reader.u32("version")
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version "
                              f"{version} at byte offset 4")
    tensors = unpack_tensor_block(reader)
    cfg_len = reader.u32("config length")
    config_text = reader.take(cfg_len, "config block").decode("utf-8")
    sections = {}
    warnings = []
    while reader.remaining:
        nlen = reader.u16("section name length")
        name = reader.take(nlen, "section name").decode("utf-8")
        plen = reader.u64(f"section {name} length")
        payload = reader.take(plen, f"section {name} payload")
        if name in KNOWN_SECTIONS:
            sections[name] = payload
        else:
            warnings.append(f"skipping unknown checkpoint section {name!r} "
                            f"({plen} bytes)")
    return Checkpoint(version, tensors, config_text, sections, warnings)


def pack_adam_section(state_arrays):
    return pack_tensor_block(state_arrays)


def unpack_adam_section(payload):
    reader = _Reader(payload, "<adam section>")
    return dict(unpack_tensor_block(reader))


def pack_meta_section(meta):
    lines = [f"{k}={meta[k]}" for k in sorted(meta)]
    return "\n".join(lines).encode("utf-8")


def unpack_meta_section(payload):
    out = {}
    for line in payload.decode("utf-8").splitlines():
        if line:
            key, _, val = line.partition("=")
            out[key] = val
    return out
