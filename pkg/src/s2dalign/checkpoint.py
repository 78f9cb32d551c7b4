"""Binary checkpoint container.

Layout: magic ``S2DCKPT``, u32 version, u32 entry count, an entry table of
(u32 name length, name bytes, u8 dtype code, u32 rank, u32 dims[rank],
u64 byte length), the little-endian payloads in table order, and a trailing
manifest block (u64 length + canonical JSON). Entries are name-sorted, the
JSON is key-sorted, and payloads normalize to little-endian, so a load
followed by a save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError
from .model import state_entries

MAGIC = b"S2DCKPT"
VERSION = 1

_DTYPE_CODES: dict[str, int] = {"float32": 0, "float64": 1, "int64": 2, "uint8": 3, "int32": 4}
_CODE_DTYPES = {v: np.dtype(k).newbyteorder("<") for k, v in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def tensor(self, name: str) -> torch.Tensor:
        if name not in self.entries:
            raise CheckpointError(f"checkpoint has no entry {name!r}")
        arr = self.entries[name]
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        return torch.from_numpy(arr)


def _normalize(array: np.ndarray) -> np.ndarray:
    kind = array.dtype.name
    if kind not in _DTYPE_CODES:
        raise CheckpointError(f"unsupported checkpoint dtype {array.dtype}")
    arr = np.asarray(array, dtype=np.dtype(kind).newbyteorder("<"))
    # ascontiguousarray up-ranks 0-d arrays, so only invoke it when needed
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


def save_checkpoint(ckpt: Checkpoint, path: Path) -> None:
    names = sorted(ckpt.entries)
    table = bytearray()
    payloads = []
    for name in names:
        arr = _normalize(ckpt.entries[name])
        raw = arr.tobytes(order="C")
        nb = name.encode("utf-8")
        table += struct.pack("<I", len(nb)) + nb
        table += struct.pack("<BI", _DTYPE_CODES[arr.dtype.name], arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<Q", len(raw))
        payloads.append(raw)
    manifest = json.dumps(
        ckpt.manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(names)))
        fh.write(table)
        for raw in payloads:
            fh.write(raw)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", data, off)
        off += 8
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        metas = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off : off + name_len].decode("utf-8")
            off += name_len
            code, rank = struct.unpack_from("<BI", data, off)
            off += 5
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            (byte_len,) = struct.unpack_from("<Q", data, off)
            off += 8
            if code not in _CODE_DTYPES:
                raise CheckpointError(f"{path}: entry {name!r} has unknown dtype code {code}")
            metas.append((name, code, dims, byte_len))
        entries = {}
        for name, code, dims, byte_len in metas:
            dtype = _CODE_DTYPES[code]
            expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if byte_len != expected:
                raise CheckpointError(
                    f"{path}: entry {name!r} payload is {byte_len} bytes, expected {expected}"
                )
            if off + byte_len > len(data):
                raise CheckpointError(f"{path}: entry {name!r} payload truncated")
            arr = np.frombuffer(data[off : off + byte_len], dtype=dtype).reshape(dims)
            entries[name] = arr.copy()
            off += byte_len
        (mlen,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + mlen > len(data):
            raise CheckpointError(f"{path}: manifest block truncated")
        manifest = json.loads(data[off : off + mlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    return Checkpoint(entries=entries, manifest=manifest)


# ---------------------------------------------------------------------------
# model bridging


def checkpoint_from_model(model: nn.Module, manifest: dict) -> Checkpoint:
    entries = {
        name: param.detach().cpu().numpy().copy()
        for name, param in state_entries(model).items()
    }
    return Checkpoint(entries=entries, manifest=dict(manifest))


def load_into_model(ckpt: Checkpoint, model: nn.Module, strict: bool = True) -> list[str]:
    """Copy checkpoint entries into matching parameters; returns loaded names."""
    params = state_entries(model)
    loaded = []
    for name, param in params.items():
        if name not in ckpt.entries:
            if strict:
                raise CheckpointError(f"checkpoint is missing entry {name!r}")
            continue
        src = ckpt.tensor(name)
        if tuple(src.shape) != tuple(param.shape):
            raise CheckpointError(
                f"entry {name!r}: shape {tuple(src.shape)} != model {tuple(param.shape)}"
            )
        with torch.no_grad():
            param.copy_(src.to(param.dtype))
        loaded.append(name)
    if strict:
        extra = set(ckpt.entries) - set(params) - {
            n for n in ckpt.entries if n.startswith(("opt/", "rng/"))
        }
        if extra:
            raise CheckpointError(f"checkpoint has unexpected entries: {sorted(extra)[:5]}")
    return loaded
