"""Binary checkpoint format.

Layout (little-endian)::

    b"CTDC" | u32 version | u32 len + JSON spec block |
    u32 entry count | entries... | u32 CRC-32 of all preceding bytes

entry := u16 name length, UTF-8 name, u8 dtype code, u8 rank,
         rank x u32 dims, raw payload
"""
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nets import ArchitectureSpec, build_architecture

MAGIC = b"CTDC"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: object
    velocities: dict
    config: dict


def _entry(name, arr):
    arr = np.asarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def checkpoint_bytes(model, velocities=None, config=None):
    meta = {
        "architecture": model.spec.to_dict(),
        "config": config,
        "trainable": {n: p.trainable for n, p in model.parameters.items()},
        "stats_initialized": {n: s.initialized for n, s in model.running_stats.items()},
        "dtype": str(model.dtype),
    }
    block = json.dumps(meta, sort_keys=True).encode("utf-8")
    entries = [_entry("param:" + n, p.data) for n, p in model.parameters.items()]
    for n, s in model.running_stats.items():
        entries.append(_entry(f"stats:{n}.mean", s.mean))
        entries.append(_entry(f"stats:{n}.var", s.var))
    for n, v in (velocities or {}).items():
        entries.append(_entry("velocity:" + n, v))
    body = MAGIC + struct.pack("<II", VERSION, len(block)) + block
    body += struct.pack("<I", len(entries)) + b"".join(entries)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model, path, velocities=None, config=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model, velocities, config))
    return path


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: {what} needs {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_checkpoint(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("corrupt header at offset 0: bad magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unknown checkpoint version {version} (expected {VERSION})")
    (block_len,) = r.unpack("<I", "spec block length")
    try:
        meta = json.loads(r.take(block_len, "spec block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt spec block at offset 12: {exc}") from None
    (count,) = r.unpack("<I", "entry count")
    entries = {}
    for _ in range(count):
        start = r.pos
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "entry name").decode("utf-8", errors="replace")
        code, rank = r.unpack("<BB", "dtype/rank")
        if code not in _DTYPES:
            raise CheckpointError(f"corrupt entry at offset {start}: dtype code {code}")
        dims = r.unpack(f"<{rank}I", "dims")
        dtype = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw = r.take(nbytes, f"payload of {name}")
        entries[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    body_end = r.pos
    (crc,) = r.unpack("<I", "checksum")
    if zlib.crc32(buf[:body_end]) != crc:
        raise CheckpointError(f"checksum mismatch at offset {body_end}")
    if r.pos != len(buf):
        raise CheckpointError(f"trailing bytes after offset {r.pos}")
    return meta, entries


def read_checkpoint(path):
    meta, entries = parse_checkpoint(Path(path).read_bytes())
    spec = ArchitectureSpec.from_dict(meta["architecture"])
    model = build_architecture(spec, seed=0, dtype=np.dtype(meta.get("dtype", "float32")))
    velocities = {}
    for name, p in model.parameters.items():
        arr = entries.get("param:" + name)
        if arr is None or arr.shape != p.data.shape:
            raise CheckpointError(f"checkpoint entry for {name} missing or mis-shaped")
        p.tensor.data = arr.astype(p.data.dtype)
        p.trainable = meta["trainable"].get(name, True)
    for name, s in model.running_stats.items():
        s.mean = entries[f"stats:{name}.mean"].astype(s.mean.dtype)
        s.var = entries[f"stats:{name}.var"].astype(s.var.dtype)
        s.initialized = meta["stats_initialized"].get(name, True)
    for key, arr in entries.items():
        if key.startswith("velocity:"):
            velocities[key[len("velocity:") :]] = arr
    return Checkpoint(model, velocities, meta.get("config"))


def load_checkpoint(path):
    return read_checkpoint(path).model
