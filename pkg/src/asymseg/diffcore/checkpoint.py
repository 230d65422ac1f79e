"""Checkpoint files: one line of JSON header, then a little-endian float32 blob.

Header entry offsets and lengths are in bytes, relative to the first byte after
the header's terminating newline.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..errors import FormatError
from .net import NetConfig, ParamStore

MOMENTUM_SUFFIX = "@momentum"


def save_checkpoint(path, stores: dict[str, ParamStore], config: dict | None = None, it: int = 0) -> None:
    entries, chunks, offset = [], [], 0
    for prefix, st in stores.items():
        for name in st.names:
            for key, arr in ((name, st.values[name]), (name + MOMENTUM_SUFFIX, st.momentum[name])):
                raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                entries.append({"name": f"{prefix}/{key}", "shape": list(arr.shape), "offset": offset, "len": len(raw)})
                chunks.append(raw)
                offset += len(raw)
    header = {
        "entries": entries,
        "config": config or {},
        "nets": {prefix: st.cfg.to_dict() for prefix, st in stores.items()},
        "iter": int(it),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path, dtype=np.float32) -> tuple[dict[str, ParamStore], dict, int]:
    """Return ``(stores, config, iter)``."""
    with open(path, "rb") as fh:
        head = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(head)
        entries = header["entries"]
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header") from exc
    values: dict[str, dict[str, np.ndarray]] = {}
    moms: dict[str, dict[str, np.ndarray]] = {}
    for e in entries:
        off, n = int(e["offset"]), int(e["len"])
        if off + n > len(blob):
            raise FormatError(f"{path}: entry {e['name']} runs past the end of the blob")
        arr = np.frombuffer(blob[off:off + n], dtype="<f4").reshape(e["shape"]).astype(dtype)
        prefix, key = e["name"].split("/", 1)
        if key.endswith(MOMENTUM_SUFFIX):
            moms.setdefault(prefix, {})[key[: -len(MOMENTUM_SUFFIX)]] = arr
        else:
            values.setdefault(prefix, {})[key] = arr
    stores = {}
    for prefix, vals in values.items():
        cfg = NetConfig(**header.get("nets", {}).get(prefix, {}))
        st = ParamStore(cfg, vals)
        for k, m in moms.get(prefix, {}).items():
            st.momentum[k] = m
        stores[prefix] = st
    return stores, header.get("config", {}), int(header.get("iter", 0))
