"""Binary container shared by checkpoints and reducer files.

Layout (little-endian)::

    magic        4 bytes
    version      u32
    header_len   u32
    header       UTF-8 JSON; lists tensor names and shapes under "tensors"
    tensors      float64 data, in header order
    crc32        u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

VERSION = 1


class FormatError(ValueError):
    """Unreadable, truncated, corrupted or wrong-version container file."""


def write(path, magic: bytes, header: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["tensors"] = [{"name": n, "shape": list(np.shape(a))} for n, a in tensors]
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<II", VERSION, len(hbytes)), hbytes]
    for _, a in tensors:
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    payload = b"".join(parts)
    payload += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
    Path(path).write_bytes(payload)


def read(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated file")
    if raw[:4] != magic:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checksum mismatch (truncated or corrupted)")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from None
    pos = 12 + hlen
    tensors = {}
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(raw) - 4:
            raise FormatError(f"{path}: truncated tensor data")
        tensors[entry["name"]] = np.frombuffer(raw[pos:pos + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(raw) - 4:
        raise FormatError(f"{path}: trailing bytes after tensor data")
    return header, tensors
