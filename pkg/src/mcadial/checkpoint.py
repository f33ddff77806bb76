"""Versioned binary checkpoints.

Layout (little endian)::

    b"MCAV"  u32 version
    u8 len + variant tag (UTF-8)
    u32 len + config block (UTF-8 JSON: model config plus run metadata)
    u32 block count
    blocks: u16 len + name, u8 rank, rank x u32 extents, float32 data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import DialogModel, ModelConfig

MAGIC = b"MCAV"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_blocks(fh, blocks: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4").tobytes())


def save_checkpoint(path: str | Path, model: DialogModel, meta: dict | None = None,
                    extra: dict[str, np.ndarray] | None = None) -> None:
    """Write model parameters plus optional extra named blocks (e.g. optimizer moments)."""
    config = {"model": model.cfg.to_dict(), "meta": meta or {}}
    blocks = dict(model.state_dict())
    for name, arr in (extra or {}).items():
        if name in blocks:
            raise CheckpointError(f"extra block {name!r} collides with a parameter name")
        blocks[name] = arr
    tag = model.variant.value.encode("utf-8")
    cfg_raw = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        fh.write(struct.pack("<B", len(tag)) + tag)
        fh.write(struct.pack("<I", len(cfg_raw)) + cfg_raw)
        write_blocks(fh, blocks)


def read_checkpoint(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Return (variant tag, config block, all named blocks)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 8
    (n,) = struct.unpack_from("<B", raw, off)
    tag = raw[off + 1:off + 1 + n].decode("utf-8")
    off += 1 + n
    (n,) = struct.unpack_from("<I", raw, off)
    config = json.loads(raw[off + 4:off + 4 + n].decode("utf-8"))
    off += 4 + n
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    blocks = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, off)
        name = raw[off + 2:off + 2 + n].decode("utf-8")
        off += 2 + n
        (rank,) = struct.unpack_from("<B", raw, off)
        shape = struct.unpack_from(f"<{rank}I", raw, off + 1)
        off += 1 + 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return tag, config, blocks


def load_checkpoint(path: str | Path) -> tuple[DialogModel, dict, dict[str, np.ndarray]]:
    """Rebuild the model; returns (model, metadata, non-parameter blocks)."""
    tag, config, blocks = read_checkpoint(path)
    cfg = ModelConfig.from_dict(config["model"])
    if cfg.variant != tag:
        raise CheckpointError(f"{path}: variant tag {tag!r} disagrees with config {cfg.variant!r}")
    model = DialogModel(cfg)
    names = {name for name, _ in model.named_parameters()}
    model.load_state_dict({k: v for k, v in blocks.items() if k in names})
    return model, config.get("meta", {}), {k: v for k, v in blocks.items() if k not in names}
