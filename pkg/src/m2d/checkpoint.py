"""Binary checkpoint container ("M2DC") with integrity checking.

Layout, little-endian: magic "M2DC", version u32, record count u32, then per
record: name_len u16, name utf-8, rank u8, dtype u8 (0 = f32, 1 = f64),
dims u32[rank], raw data; finally a CRC32 trailer over everything before it.
Nothing is consumed unless the CRC, magic, and version all verify.

Model parameters live under "E.", "D1.", "D2.", "D3.", "T." prefixes; the
transition matrix under "M.transition" (float64); optimizer state under
"opt."; model hyperparameters under "cfg.model".
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"M2DC"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class ChecksumMismatch(ValueError):
    """File is truncated or corrupt; no partial state was exposed."""


class VersionUnsupported(ValueError):
    pass


class MissingComponent(KeyError):
    pass


def save(path, arrays: dict) -> None:
    """Write a name -> ndarray mapping; float32 unless the array is float64."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = np.dtype(np.float64) if arr.dtype == np.float64 else np.dtype(np.float32)
        data = np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<"))
        raw_name = name.encode("utf-8")
        buf += struct.pack("<H", len(raw_name))
        buf += raw_name
        buf += struct.pack("<BB", arr.ndim, _CODES[dtype])
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += data.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def load(path) -> dict:
    """Verify CRC/magic/version, then parse every record. Returns name -> array."""
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise ChecksumMismatch(f"{path}: file too short")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch")
    if blob[:4] != MAGIC:
        raise ChecksumMismatch(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} unsupported")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            rank, dcode = struct.unpack_from("<BB", blob, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dtype = _DTYPES[dcode]
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype=dtype, count=n, offset=pos).reshape(dims)
            pos += n * dtype.itemsize
            out[name] = arr.copy()
    except (struct.error, KeyError, ValueError) as exc:
        raise ChecksumMismatch(f"{path}: malformed record table ({exc})") from exc
    if pos != len(blob) - 4:
        raise ChecksumMismatch(f"{path}: trailing bytes after record table")
    return out


def require_prefix(arrays: dict, prefix: str) -> dict:
    """Sub-dict under ``prefix.``; raises MissingComponent when absent."""
    sub = {k: v for k, v in arrays.items() if k.startswith(prefix + ".")}
    if not sub:
        raise MissingComponent(f"checkpoint lacks component {prefix!r}")
    return sub
