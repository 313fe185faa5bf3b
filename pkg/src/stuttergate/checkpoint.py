"""SGCK checkpoint container shared by the classifier and the transducer.

Layout: magic "SGCK", version u16, kind string, arch JSON block, then
named tensors as (name, shape, row-major f32 little-endian data).  All
parameters are kept as float32 in memory, so save -> load round-trips
bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

SGCK_MAGIC = b"SGCK"
SGCK_VERSION = 1


def _write_str(fh, s: str, width: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack(width, len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("checkpoint truncated")
    return buf


def save_checkpoint(path, kind: str, arch: dict, tensors: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(SGCK_MAGIC)
        fh.write(struct.pack("<H", SGCK_VERSION))
        _write_str(fh, kind, "<H")
        _write_str(fh, json.dumps(arch, sort_keys=True), "<I")
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            _write_str(fh, name, "<H")
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[str, dict, dict]:
    """Returns (kind, arch dict, {name: float32 ndarray})."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != SGCK_MAGIC:
            raise FormatError("bad checkpoint magic, expected 'SGCK'")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != SGCK_VERSION:
            raise FormatError(f"unsupported SGCK version {version}")
        (kind_len,) = struct.unpack("<H", _read_exact(fh, 2))
        kind = _read_exact(fh, kind_len).decode("utf-8")
        (arch_len,) = struct.unpack("<I", _read_exact(fh, 4))
        arch = json.loads(_read_exact(fh, arch_len).decode("utf-8"))
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
            tensors[name] = data.reshape(shape).copy()
    return kind, arch, tensors
