"""Binary checkpoint container.

Layout (little-endian)::

    b"SATCKPT1"
    u32 header length, UTF-8 JSON header (may be empty)
    u32 entry count
    per entry: u32 name length, name, u32 rank, rank x u32 dims, f32 data

Optimizer moments are stored as ordinary entries under ``opt/m/<name>`` and
``opt/v/<name>``; its scalar settings live in the header under ``"optimizer"``
so they round-trip exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .optim import OptimizerState

MAGIC = b"SATCKPT1"


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, tensors: dict[str, np.ndarray], header: dict | None = None,
                     opt: OptimizerState | None = None) -> None:
    entries = dict(tensors)
    if opt is not None:
        header = dict(header or {})
        header["optimizer"] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                               "weight_decay": opt.weight_decay, "step": opt.step}
        for k in sorted(opt.m):
            entries[f"opt/m/{k}"] = opt.m[k]
            entries[f"opt/v/{k}"] = opt.v[k]
    hdr = json.dumps(header or {}, sort_keys=True).encode() if header is not None else b""
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", len(hdr)) + hdr
    buf += struct.pack("<I", len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        nb = name.encode()
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, OptimizerState | None]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated file")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    (hlen,) = struct.unpack("<I", take(4))
    htext = take(hlen)
    header = json.loads(htext) if hlen else {}
    (count,) = struct.unpack("<I", take(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode()
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    opt = None
    if "optimizer" in header:
        opt = OptimizerState(**header.pop("optimizer"))
        for k in [k for k in out if k.startswith("opt/")]:
            kind, pname = k[4], k[6:]
            (opt.m if kind == "m" else opt.v)[pname] = out.pop(k)
    return out, header, opt
