"""Binary checkpoint format.

Layout: 8 magic bytes, little-endian uint32 format version, uint32 header
length, a UTF-8 JSON header (architecture tag, config, dtype, manifest of
name/shape/byte offset), then the raw little-endian parameter data.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"STDCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arch: str, config: dict, params: dict, manifest=None, dtype: str = "<f4") -> None:
    """Write ``params`` in manifest order (or sorted-name order)."""
    if dtype not in ("<f4", "<f8"):
        raise CheckpointError(f"unsupported dtype {dtype}")
    names = [n for n, _ in manifest] if manifest is not None else sorted(params)
    entries, blobs, offset = [], [], 0
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype=dtype)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"arch": arch, "config": config, "dtype": dtype, "manifest": entries},
                        sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(header, params)``; parameters are float64 arrays."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[16:16 + hlen])
    body = raw[16 + hlen:]
    dt = np.dtype(header["dtype"])
    params = {}
    for e in header["manifest"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"]
        end = start + count * dt.itemsize
        if end > len(body):
            raise CheckpointError(f"{path}: truncated data for {e['name']}")
        params[e["name"]] = np.frombuffer(body[start:end], dtype=dt).reshape(e["shape"]).astype(np.float64)
    return header, params


def load_checkpoint(path, arch: str | None = None, manifest=None) -> tuple[dict, dict]:
    """Read and validate against an expected architecture and manifest.

    Raises :class:`CheckpointError` naming the first mismatch.
    """
    header, params = read_checkpoint(path)
    if arch is not None and header["arch"] != arch:
        raise CheckpointError(f"{path}: architecture {header['arch']!r}, expected {arch!r}")
    if manifest is not None:
        stored = [(e["name"], tuple(e["shape"])) for e in header["manifest"]]
        expected = [(n, tuple(s)) for n, s in manifest]
        for (sn, ss), (en, es) in zip(stored, expected):
            if sn != en or ss != es:
                raise CheckpointError(f"{path}: parameter {en!r} expected shape {es}, "
                                      f"checkpoint has {sn!r} with shape {ss}")
        if len(stored) != len(expected):
            raise CheckpointError(f"{path}: checkpoint has {len(stored)} parameters, expected {len(expected)}")
    return header, params
