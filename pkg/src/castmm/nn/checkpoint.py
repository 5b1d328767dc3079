"""Binary checkpoint format.

Layout: ``b"CASTCKPT"`` magic, little-endian uint64 header length, UTF-8 JSON
header, then raw little-endian tensor payloads in manifest order. The header
carries ``format_version``, the ``manifest`` (name, shape, dtype, offset,
nbytes per tensor) and free-form ``meta``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"CASTCKPT"
FORMAT_VERSION = 1
_NP = {"float64": "<f8", "float32": "<f4", "int64": "<i8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    manifest, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _NP:
            raise CheckpointError(f"unsupported dtype {dtype} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_NP[dtype]).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "manifest": manifest, "meta": meta or {}}, sort_keys=True
    ).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n])
    if header["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header['format_version']}")
    base = 16 + n
    out = {}
    for m in header["manifest"]:
        buf = data[base + m["offset"] : base + m["offset"] + m["nbytes"]]
        arr = np.frombuffer(buf, dtype=_NP[m["dtype"]]).reshape(m["shape"]).astype(m["dtype"])
        out[m["name"]] = torch.from_numpy(arr.copy())
    return out, header["meta"]


def load_into(module: torch.nn.Module, tensors: dict[str, torch.Tensor], prefixes=None) -> list[str]:
    """Copy matching parameters into ``module``; returns the names loaded."""
    own = dict(module.named_parameters())
    loaded = []
    with torch.no_grad():
        for name, p in own.items():
            if prefixes is not None and not any(name.startswith(pre) for pre in prefixes):
                continue
            if name in tensors:
                src = tensors[name]
                if tuple(src.shape) != tuple(p.shape):
                    raise CheckpointError(f"shape mismatch for {name}: {tuple(src.shape)} vs {tuple(p.shape)}")
                p.copy_(src.to(p.dtype))
                loaded.append(name)
    return loaded
