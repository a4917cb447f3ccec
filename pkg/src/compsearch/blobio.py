"""Versioned binary container: magic, JSON header, raw blobs, trailing CRC32.

Layout: 8-byte magic (ASCII tag + version digits), little-endian u32 header
length, UTF-8 JSON header, concatenated blobs, and a little-endian u32 CRC32
of everything before it. The header carries a ``blobs`` list of
{name, offset, length, dtype, shape} descriptors with offsets relative to the
start of the blob section.
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import Sequence

import numpy as np

from .canvas import atomic_write_bytes


class BlobFormatError(ValueError):
    """File does not parse as the expected container."""


def _split_magic(magic: str) -> tuple[str, str]:
    tag = magic.rstrip("0123456789")
    return tag, magic[len(tag):]


def pack_blob_file(magic: str, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    descriptors = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float32:
            dtype = "f32le"
        elif arr.dtype == np.uint8:
            dtype = "u8"
        elif arr.dtype == np.int64:
            dtype = "i64le"
        else:
            raise ValueError(f"unsupported blob dtype {arr.dtype} for {name!r}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        descriptors.append(
            {
                "name": name,
                "offset": len(payload),
                "length": len(raw),
                "dtype": dtype,
                "shape": list(arr.shape),
            }
        )
        payload.extend(raw)
    full_header = dict(header)
    full_header["blobs"] = descriptors
    header_bytes = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = magic.encode("ascii") + struct.pack("<I", len(header_bytes)) + header_bytes + bytes(payload)
    return body + struct.pack("<I", zlib.crc32(body))


def write_blob_file(path, magic: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, pack_blob_file(magic, header, arrays))


_DTYPES = {"f32le": np.dtype("<f4"), "u8": np.dtype("u1"), "i64le": np.dtype("<i8")}


def parse_blob_file(data: bytes, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    tag, version = _split_magic(magic)
    if len(data) < 16:
        raise BlobFormatError("truncated file: shorter than any valid container")
    found = data[:8]
    try:
        found_text = found.decode("ascii")
    except UnicodeDecodeError:
        raise BlobFormatError(f"bad magic {found!r}, expected {magic!r}") from None
    if not found_text.startswith(tag):
        raise BlobFormatError(f"bad magic {found_text!r}, expected {magic!r}")
    if found_text != magic:
        raise BlobFormatError(
            f"unsupported version {found_text[len(tag):]!r} (supported: {version!r})"
        )
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4])
    if stored_crc != actual_crc:
        raise BlobFormatError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    header_len = struct.unpack("<I", data[8:12])[0]
    header_end = 12 + header_len
    if header_end > len(data) - 4:
        raise BlobFormatError("truncated file: header extends past end")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BlobFormatError(f"corrupt header: {exc}") from None
    blob_section = data[header_end:-4]
    arrays = {}
    for desc in header.get("blobs", []):
        off, length = desc["offset"], desc["length"]
        if off + length > len(blob_section):
            raise BlobFormatError(f"blob {desc['name']!r} extends past end of file")
        dtype = _DTYPES.get(desc["dtype"])
        if dtype is None:
            raise BlobFormatError(f"blob {desc['name']!r} has unknown dtype {desc['dtype']!r}")
        flat = np.frombuffer(blob_section, dtype=dtype, count=length // dtype.itemsize, offset=off)
        shape = tuple(desc["shape"])
        if int(np.prod(shape)) != flat.size:
            raise BlobFormatError(
                f"blob {desc['name']!r}: shape {shape} does not match {flat.size} elements"
            )
        arrays[desc["name"]] = flat.reshape(shape).astype(dtype.newbyteorder("="), copy=False)
    return header, arrays


def read_blob_file(path, magic: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_blob_file(data, magic)


def require_shapes(arrays: dict[str, np.ndarray], expected: Sequence[tuple[str, tuple]]) -> None:
    for name, shape in expected:
        if name not in arrays:
            raise BlobFormatError(f"missing blob {name!r}")
        if arrays[name].shape != shape:
            raise BlobFormatError(
                f"shape descriptor mismatch for {name!r}: "
                f"file has {arrays[name].shape}, expected {shape}"
            )
