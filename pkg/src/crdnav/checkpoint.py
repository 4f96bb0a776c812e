"""Versioned binary container for trainer state.

Layout::

    magic (8 bytes) | version (u32 LE) | header length (u64 LE) | header (UTF-8 JSON)
    | payload: named blocks of little-endian float64 | sha256 of everything before (32 bytes)

The JSON header carries free-form metadata (config echo, RNG states, counters)
plus ``blocks``: a list of ``{"name", "shape", "offset"}`` entries indexing the
payload.  Offsets are in bytes from the payload start.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError, LayoutError

MAGIC = b"CRDNAVCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


def write_container(path, meta: dict, blocks: dict) -> None:
    index, chunks, offset = [], [], 0
    for name, arr in blocks.items():
        a = np.array(arr, dtype="<f8", order="C")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        raw = a.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({**meta, "blocks": index}, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + digest)
    tmp.replace(path)


def _split(raw: bytes):
    if len(raw) < _PREFIX.size + _DIGEST:
        raise IntegrityError(f"checkpoint truncated: only {len(raw)} bytes")
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise IntegrityError("not a crdnav checkpoint (bad magic bytes)")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    return version, hlen, body, digest


def read_container(path):
    """Returns ``(meta, blocks)``; refuses future versions and corrupted payloads."""
    raw = Path(path).read_bytes()
    version, hlen, body, digest = _split(raw)
    if version > FORMAT_VERSION:
        raise LayoutError(f"checkpoint format version {version} is newer than supported {FORMAT_VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch: file is corrupted or truncated")
    start = _PREFIX.size
    try:
        meta = json.loads(body[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"checkpoint header unreadable: {exc}") from None
    payload = body[start + hlen:]
    blocks = {}
    for entry in meta.pop("blocks"):
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 8
        lo = entry["offset"]
        if lo + n > len(payload):
            raise IntegrityError(f"block {entry['name']} runs past the payload end")
        blocks[entry["name"]] = np.frombuffer(payload[lo:lo + n], dtype="<f8").reshape(shape).astype(np.float64)
    return meta, blocks


def inspect_container(path) -> dict:
    """Best-effort summary that never raises on a corrupted payload."""
    raw = Path(path).read_bytes()
    version, hlen, body, digest = _split(raw)
    ok = hashlib.sha256(body).digest() == digest
    start = _PREFIX.size
    try:
        meta = json.loads(body[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        meta = {"blocks": []}
    return {"version": version, "checksum_ok": ok, "meta": meta,
            "blocks": [(b["name"], tuple(b["shape"])) for b in meta.get("blocks", [])]}
