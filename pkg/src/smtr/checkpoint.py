"""Binary checkpoint format.

Layout: magic ``SMTR``, little-endian u32 version, u32-length-prefixed UTF-8
JSON metadata (vocabulary and config key-values), then one record per tensor:
u32 name length, name bytes, u32 rank, u32 dims, raw little-endian float32
payload. Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig
from .tensor import Tensor, parameter
from .vocab import CharVocab

MAGIC = b"SMTR"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    model_config: ModelConfig
    vocab: CharVocab
    extra: dict


def save_checkpoint(path, params: dict[str, Tensor], model_config: ModelConfig,
                    extra: dict | None = None) -> None:
    meta = {
        "vocab": model_config.charset,
        "config": model_config.to_dict(),
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        for name, p in params.items():
            nb = name.encode("utf-8")
            arr = np.ascontiguousarray(p.data, dtype="<f4")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC.decode()!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
        (mlen,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, mlen, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt metadata block: {e}") from None
        params: dict[str, Tensor] = {}
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint while reading record header")
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(f, nlen, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"rank of {name}"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"dims of {name}"))
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = _read_exact(f, 4 * count, f"payload of {name}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
            params[name] = parameter(arr)
    cfg = ModelConfig.from_dict(meta.get("config", {}))
    return Checkpoint(params, cfg, CharVocab(meta["vocab"]), meta.get("extra", {}))


def checkpoint_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]
