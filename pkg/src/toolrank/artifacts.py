"""Self-describing binary container used for checkpoints and run files.

Layout (all integers little-endian)::

    8 bytes   magic  b"TOOLRANK"
    u16       format version
    u32       header length in bytes
    N bytes   UTF-8 JSON header (sorted keys)
    ...       array payloads, C order, little-endian, in header order

The header carries ``kind`` (e.g. ``"tool"``, ``"ensemble"``, ``"run"``),
free-form metadata, and an ``arrays`` list of ``{name, dtype, shape}``.
Output is byte-identical for identical inputs (no timestamps).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"TOOLRANK"
FORMAT_VERSION = 1


class ArtifactError(ValueError):
    pass


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    specs, blobs = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        blobs.append(le.tobytes())
    header = canonical_json({"kind": kind, "meta": meta, "arrays": specs}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, arrays)``; ``meta`` also carries ``kind``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ArtifactError(f"{path}: not a toolrank container")
    version, hlen = struct.unpack_from("<HI", data, 8)
    if version != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported container version {version}")
    offset = 14
    header = json.loads(data[offset:offset + hlen].decode("utf-8"))
    offset += hlen
    if kind is not None and header["kind"] != kind:
        raise ArtifactError(f"{path}: expected a {kind!r} container, found {header['kind']!r}")
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += count * dtype.itemsize
    meta = dict(header["meta"])
    meta["kind"] = header["kind"]
    return meta, arrays
