"""Binary feature archive (``EGNF``) and its CSV debug export.

Layout, little-endian: ``b"EGNF"``, u16 version, u32 frames, u32 dims,
then ``frames * dims`` float32 values in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EGNF"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


class ArchiveError(ValueError):
    pass


def to_bytes(features: np.ndarray) -> bytes:
    f = np.asarray(features)
    if f.ndim != 2:
        raise ArchiveError("feature matrix must be 2-D")
    body = np.ascontiguousarray(f, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, f.shape[0], f.shape[1]) + body


def from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise ArchiveError("truncated feature archive header")
    magic, version, frames, dims = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    expected = _HEADER.size + 4 * frames * dims
    if len(blob) != expected:
        raise ArchiveError(f"archive holds {len(blob)} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return data.reshape(frames, dims).astype(np.float64)


def write_features(path, features: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(features))


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def export_csv(path, features: np.ndarray) -> None:
    f = np.asarray(features, dtype=np.float32)
    header = ",".join(f"d{i}" for i in range(f.shape[1]))
    np.savetxt(path, f, delimiter=",", header=header, comments="", fmt="%.7g")
