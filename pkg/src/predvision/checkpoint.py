"""Chunked binary container used for model and readout checkpoints.

Layout (little-endian)::

    b"PVMC" | u32 version | u32 n_chunks | chunk*
    chunk = u32 name_len | name (utf-8) | u64 payload_len | payload

Array payloads carry their own dtype and shape header so float64 state
round-trips bit for bit.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"PVMC"
VERSION = 1

_DTYPES = {b"f8": "<f8", b"f4": "<f4", b"i8": "<i8", b"i4": "<i4", b"u1": "u1"}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


class VersionError(CheckpointError):
    pass


def encode_array(arr):
    arr = np.asarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    code = _CODES.get(le.dtype.str)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    header = code + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(le).tobytes()


def decode_array(payload):
    try:
        code = payload[:2]
        (ndim,) = struct.unpack_from("<I", payload, 2)
        shape = struct.unpack_from(f"<{ndim}Q", payload, 6)
        offset = 6 + 8 * ndim
        dtype = np.dtype(_DTYPES[code])
    except (KeyError, struct.error) as exc:
        raise CheckpointError("malformed array chunk") from exc
    count = int(np.prod(shape, dtype=np.int64))
    if len(payload) - offset != count * dtype.itemsize:
        raise CheckpointError("array chunk size does not match its shape")
    arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    return arr.reshape(shape).astype(dtype.newbyteorder("="))


def encode_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def decode_json(payload):
    return json.loads(payload.decode())


def write_container(path, chunks, version=VERSION):
    """Write ``chunks`` (name -> bytes, insertion order kept) to ``path``."""
    parts = [MAGIC, struct.pack("<II", version, len(chunks))]
    for name, payload in chunks.items():
        raw = name.encode()
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", len(payload)), payload]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_container(path, expected_version=VERSION):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != expected_version:
        raise VersionError(f"{path}: version {version}, expected {expected_version}")
    pos, chunks = 12, {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + nlen].decode()
            pos += 4 + nlen
            (plen,) = struct.unpack_from("<Q", data, pos)
            pos += 8
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"{path}: truncated chunk header") from exc
        if pos + plen > len(data):
            raise CheckpointError(f"{path}: truncated chunk {name!r}")
        chunks[name] = data[pos:pos + plen]
        pos += plen
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return chunks
