"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"TXLBCKPT"
    uint32    format version
    uint32    metadata length N
    N bytes   metadata, UTF-8 JSON with sorted keys
    repeated, once per tensor:
        uint32  name length, name bytes (UTF-8)
        uint32  rank, then rank x uint32 dims
        float32 payload, row-major

The metadata lists the tensor count, so a file cut short anywhere is detected.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from transferlab.autodiff import Tensor
from transferlab.errors import CorruptCheckpoint, UnsupportedVersion
from transferlab.model.transformer import FIXED_TENSORS, ModelConfig, PartitionedModel

MAGIC = b"TXLBCKPT"
VERSION = 1


def checkpoint_bytes(model: PartitionedModel) -> bytes:
    tensors = model.named_tensors()
    meta = {
        "config": model.config.to_dict(),
        "phase": model.phase,
        "step": int(model.step),
        "vocab_hashes": model.vocab_hashes,
        "partition": {"core": list(model.core), "embeddings": list(model.embeddings)},
        "trainable": {k: bool(t.requires_grad) for k, t in tensors.items() if k not in FIXED_TENSORS},
        "tied": {"output_projection": "tgt_embed"},
        "tensor_count": len(tensors),
        "extra": model.extra,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    for name, t in tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: PartitionedModel, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpoint(f"truncated: needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def checkpoint_from_bytes(buf: bytes) -> PartitionedModel:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}, this build reads {VERSION}")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable metadata: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    for _ in range(meta["tensor_count"]):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CorruptCheckpoint(f"{len(buf) - r.pos} trailing bytes")

    trainable = meta["trainable"]
    try:
        core = {k: Tensor(tensors[k], requires_grad=trainable.get(k, False)) for k in meta["partition"]["core"]}
        emb = {k: Tensor(tensors[k], requires_grad=trainable.get(k, False))
               for k in meta["partition"]["embeddings"]}
    except KeyError as exc:
        raise CorruptCheckpoint(f"partition names a missing tensor {exc}") from exc
    return PartitionedModel(ModelConfig.from_dict(meta["config"]), core, emb, phase=meta["phase"],
                            step=meta["step"], vocab_hashes=meta["vocab_hashes"], extra=meta.get("extra"))


def load_checkpoint(path: str | Path) -> PartitionedModel:
    return checkpoint_from_bytes(Path(path).read_bytes())
