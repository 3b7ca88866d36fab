"""Little-endian binary container for float64 tensors.

One tensor is encoded as::

    magic   4 bytes  b"RCT1"
    rank    uint32
    dims    rank x uint64
    payload prod(dims) x float64, row-major

A named collection (used by checkpoints) is a sequence of records::

    magic      4 bytes  b"RCTS"
    count      uint32
    per record:
        name_len  uint32, then name_len bytes of UTF-8
        crc32     uint32 over the tensor container bytes
        size      uint64, then the tensor container (above)
"""

from __future__ import annotations

import io
import struct
import zlib
from typing import Mapping

import numpy as np

from rccf.errors import CheckpointError

TENSOR_MAGIC = b"RCT1"
COLLECTION_MAGIC = b"RCTS"


def tensor_to_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d
    header = TENSOR_MAGIC + struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + array.tobytes(order="C")


def tensor_from_bytes(blob: bytes, name: str = "<tensor>") -> np.ndarray:
    if len(blob) < 8 or blob[:4] != TENSOR_MAGIC:
        raise CheckpointError(f"tensor record {name!r}: bad magic")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8 + 8 * rank
    if len(blob) < offset:
        raise CheckpointError(f"tensor record {name!r}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", blob, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(blob) != offset + 8 * count:
        raise CheckpointError(f"tensor record {name!r}: payload has {len(blob) - offset} bytes, "
                              f"expected {8 * count} for shape {tuple(dims)}")
    return np.frombuffer(blob, dtype="<f8", offset=offset).astype(np.float64).reshape(dims)


def write_collection(stream, tensors: Mapping[str, np.ndarray]) -> None:
    stream.write(COLLECTION_MAGIC + struct.pack("<I", len(tensors)))
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        body = tensor_to_bytes(array)
        stream.write(struct.pack("<I", len(encoded)) + encoded)
        stream.write(struct.pack("<IQ", zlib.crc32(body), len(body)))
        stream.write(body)


def _read_exact(stream, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise CheckpointError(f"unexpected end of file while reading {what}")
    return data


def read_collection(stream) -> dict:
    if _read_exact(stream, 4, "collection magic") != COLLECTION_MAGIC:
        raise CheckpointError("not a tensor collection (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(stream, 4, "record count"))
    out = {}
    previous = "<start>"
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(stream, 4, f"record after {previous!r}"))
        try:
            name = _read_exact(stream, name_len, f"name after {previous!r}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"undecodable record name after {previous!r}") from exc
        crc, size = struct.unpack("<IQ", _read_exact(stream, 12, f"tensor record {name!r}"))
        body = _read_exact(stream, size, f"tensor record {name!r}")
        if zlib.crc32(body) != crc:
            raise CheckpointError(f"tensor record {name!r}: checksum mismatch")
        out[name] = tensor_from_bytes(body, name)
        previous = name
    return out


def collection_to_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    write_collection(buf, tensors)
    return buf.getvalue()


def collection_from_bytes(blob: bytes) -> dict:
    return read_collection(io.BytesIO(blob))
