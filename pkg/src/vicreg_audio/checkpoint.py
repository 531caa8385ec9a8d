"""Binary checkpoints.

Layout: ``b"VBSSL1"``, little-endian u32 metadata length, UTF-8 JSON
metadata, then every parameter and buffer as little-endian float32 in the
store's order. The metadata lists each entry's name, kind, shape and byte
offset into the data section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ParamStore

MAGIC = b"VBSSL1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, store: ParamStore, seed: int = 0, epoch: int = 0, extra: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for kind, table in (("param", store.params), ("buffer", store.buffers)):
        for name, value in table.items():
            data = np.ascontiguousarray(value, dtype="<f4").tobytes()
            entry = {"name": name, "kind": kind, "shape": list(value.shape), "offset": offset}
            if kind == "param":
                entry["requires_grad"] = bool(store.requires_grad.get(name, True))
            entries.append(entry)
            chunks.append(data)
            offset += len(data)
    meta = {
        "format": "VBSSL1",
        "dtype": "float32-le",
        "config": store.config.to_dict(),
        "seed": int(seed),
        "epoch": int(epoch),
        "entries": entries,
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(chunks))


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Return the stored parameters (as float32) and the metadata dict."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if raw[:6] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a VBSSL1 checkpoint")
    if len(raw) < 10:
        raise CheckpointError(f"{path}: truncated header")
    (meta_len,) = struct.unpack("<I", raw[6:10])
    try:
        meta = json.loads(raw[10:10 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable metadata ({exc})") from None
    data = raw[10 + meta_len:]
    params, buffers, requires_grad = {}, {}, {}
    for entry in meta["entries"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 4 * count > len(data):
            raise CheckpointError(f"{path}: data for {entry['name']} is truncated")
        value = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(entry["shape"])
        value = value.astype(np.float32)
        if entry["kind"] == "param":
            params[entry["name"]] = value
            requires_grad[entry["name"]] = entry.get("requires_grad", True)
        else:
            buffers[entry["name"]] = value
    store = ParamStore(ModelConfig.from_dict(meta["config"]), params, buffers, requires_grad)
    return store, meta
