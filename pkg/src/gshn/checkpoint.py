"""Single-file checkpoints: magic, version, JSON header, little-endian f64 blobs."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import Config
from .model import GSHN

MAGIC = b"GSHNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: GSHN, config: Config, seed: int, epoch: int,
                    vocab_tokens: list[str]) -> None:
    arrays = [(p.name, p.value) for p in model.parameters()]
    arrays += sorted(model.buffers().items())
    header = {
        "config": dict(config),
        "seed": seed,
        "epoch": epoch,
        "vocab": vocab_tokens,
        "entries": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(model, config, header)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    config = Config(header["config"])
    model = GSHN(config.model_config(), len(header["vocab"]), header["seed"])
    targets = {p.name: p.value for p in model.parameters()}
    targets.update(model.buffers())
    off = 20 + hlen
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        if entry["name"] not in targets or targets[entry["name"]].shape != shape:
            raise CheckpointError(f"{path}: unexpected entry {entry['name']!r} {shape}")
        targets[entry["name"]][...] = arr
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    return model, config, header
