"""Binary envelope shared by VAE checkpoints and fitted density models.

Layout (little-endian)::

    8 bytes   magic b"VAECKPT1"
    4 bytes   u32 length L of the JSON header
    L bytes   UTF-8 JSON header (sorted keys); ``header["kind"]`` tags the payload
    8*P bytes float64 payload, P = header["payload_size"]
    4 bytes   u32 CRC-32 of the payload bytes
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DataLengthError, FormatError

MAGIC = b"VAECKPT1"

__all__ = ["MAGIC", "encode_container", "decode_container", "write_container", "read_container"]


def encode_container(kind: str, header: dict, payload) -> bytes:
    payload = np.ascontiguousarray(payload, dtype="<f8").reshape(-1)
    meta = dict(header)
    meta["kind"] = kind
    meta["payload_size"] = int(payload.size)
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = payload.tobytes()
    return MAGIC + struct.pack("<I", len(text)) + text + body + struct.pack("<I", zlib.crc32(body))


def decode_container(raw: bytes, kind=None):
    """Return ``(kind, header, payload)``; raise on any structural defect."""
    if raw[:8] != MAGIC:
        raise FormatError(f"bad container magic {raw[:8]!r}")
    if len(raw) < 12:
        raise DataLengthError("container truncated in header length")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise DataLengthError("container truncated in header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable container header: {e}") from None
    size = int(header.get("payload_size", -1))
    start = 12 + hlen
    end = start + 8 * size
    if size < 0 or len(raw) != end + 4:
        raise DataLengthError(f"container payload length mismatch (header announces {size} values)")
    body = raw[start:end]
    (crc,) = struct.unpack("<I", raw[end:])
    if crc != zlib.crc32(body):
        raise FormatError("container payload checksum mismatch")
    found = header.pop("kind", None)
    header.pop("payload_size")
    if kind is not None and found != kind:
        raise FormatError(f"container holds {found!r}, expected {kind!r}")
    return found, header, np.frombuffer(body, dtype="<f8").astype(np.float64)


def write_container(path, kind, header, payload):
    Path(path).write_bytes(encode_container(kind, header, payload))


def read_container(path, kind=None):
    return decode_container(Path(path).read_bytes(), kind)
