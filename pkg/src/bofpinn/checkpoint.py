"""Checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"BOFPINN1"
    8 bytes   uint64 length n of the metadata block
    n bytes   UTF-8 JSON metadata: architecture, problem tag, alpha, seed,
              parameter names and shapes (in ParamStore order), payload count
    8*m bytes float64 '<f8' payload, the flattened parameters

Metadata are parsed and checked against the file size before the payload is
read.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Optional

import numpy as np

from .nn import ParamStore

__all__ = ["MAGIC", "CorruptCheckpoint", "save_checkpoint", "load_checkpoint", "load_into",
           "save_surrogate", "load_surrogate"]

MAGIC = b"BOFPINN1"


class CorruptCheckpoint(ValueError):
    pass


def save_checkpoint(path, store: ParamStore, meta: Optional[dict] = None) -> None:
    meta = dict(meta or {})
    meta["params"] = [[k, list(v.shape)] for k, v in store.items()]
    meta["count"] = store.size
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = store.flatten().astype("<f8").tobytes()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(ParamStore, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:8] != MAGIC:
        if data[:7] == MAGIC[:7]:
            raise CorruptCheckpoint(f"corrupt checkpoint {path}: unsupported version {data[:8]!r}")
        raise CorruptCheckpoint(f"corrupt checkpoint {path}: bad magic")
    (n,) = struct.unpack("<Q", data[8:16])
    if 16 + n > len(data):
        raise CorruptCheckpoint(f"corrupt checkpoint {path}: truncated metadata")
    try:
        meta = json.loads(data[16:16 + n].decode("utf-8"))
        shapes = [(k, tuple(s)) for k, s in meta["params"]]
        count = int(meta["count"])
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptCheckpoint(f"corrupt checkpoint {path}: unreadable metadata ({e})") from None
    if sum(int(np.prod(s)) for _, s in shapes) != count:
        raise CorruptCheckpoint(f"corrupt checkpoint {path}: inconsistent metadata")
    body = data[16 + n:]
    if len(body) != 8 * count:
        raise CorruptCheckpoint(f"corrupt checkpoint {path}: payload has {len(body)} bytes, "
                                f"expected {8 * count}")
    flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
    store = ParamStore()
    pos = 0
    for k, s in shapes:
        m = int(np.prod(s))
        store[k] = flat[pos:pos + m].reshape(s)
        pos += m
    return store, meta


def load_into(target: ParamStore, loaded: ParamStore, names=None) -> ParamStore:
    """Copy ``loaded`` parameters into a store of the same architecture."""
    from .surrogate import ArchitectureMismatch

    names = target.names() if names is None else names
    out = target.copy()
    for k in names:
        if k not in loaded:
            raise ArchitectureMismatch(f"checkpoint lacks parameter {k}")
        if tuple(loaded[k].shape) != tuple(target[k].shape):
            raise ArchitectureMismatch(f"parameter {k}: checkpoint shape {tuple(loaded[k].shape)} "
                                       f"vs target shape {tuple(target[k].shape)}")
        out[k] = loaded[k]
    return out


def save_surrogate(path, s, tag: str = "", alpha: Optional[float] = None, extra: Optional[dict] = None) -> None:
    meta = {"format": 1, "arch": s.arch.to_dict(), "domain": [list(iv) for iv in s.domain],
            "window": list(s.window), "xi_law": s.xi_law, "seed": s.seed, "tag": tag, "alpha": alpha}
    meta.update(extra or {})
    save_checkpoint(path, s.params, meta)


def load_surrogate(path):
    from .surrogate import Architecture, BOSurrogate

    store, meta = load_checkpoint(path)
    if "arch" not in meta:
        raise CorruptCheckpoint(f"{path} holds no surrogate metadata")
    arch = Architecture.from_dict(meta["arch"])
    s = BOSurrogate(arch, meta["domain"], tuple(meta["window"]), meta["xi_law"], meta["seed"], params=store)
    return s, meta
