"""Versioned binary checkpoint container.

Layout: an 8-byte magic, a format version, a JSON blob with the model
configuration and ablation switches, then every state tensor as a named
little-endian array in sorted name order. The encoding has no timestamps
or addresses, so two checkpoints are byte-identical exactly when their
configurations and weights are.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .model import Ablation, ModelConfig, TaggingModel

MAGIC = b"ASTETAG\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _config_payload(model: TaggingModel) -> bytes:
    config = asdict(model.config)
    ablation = asdict(model.ablation)
    ablation["mask_layers"] = sorted(ablation["mask_layers"])
    return json.dumps(
        {"config": config, "ablation": ablation},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")


def save_checkpoint(model: TaggingModel, path: str | Path) -> None:
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    payload = _config_payload(model)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            array = np.ascontiguousarray(state[name])
            dtype = array.dtype.newbyteorder("<").str
            fh.write(struct.pack("<H", len(name)))
            fh.write(name.encode("utf-8"))
            fh.write(struct.pack("<B", len(dtype)))
            fh.write(dtype.encode("ascii"))
            fh.write(struct.pack("<B", array.ndim))
            for dim in array.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(array.astype(dtype, copy=False).tobytes())


def load_checkpoint(path: str | Path) -> TaggingModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint format version {version}"
            )
        (payload_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(payload_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (dtype_len,) = struct.unpack("<B", fh.read(1))
            dtype = np.dtype(fh.read(dtype_len).decode("ascii"))
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(
                struct.unpack("<I", fh.read(4))[0] for _ in range(ndim)
            )
            n_bytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise CheckpointError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last array")

    config = ModelConfig(**meta["config"])
    ablation_meta = dict(meta["ablation"])
    ablation_meta["mask_layers"] = frozenset(ablation_meta["mask_layers"])
    ablation = Ablation(**ablation_meta)
    model = TaggingModel(config, ablation)
    state = {name: torch.from_numpy(a) for name, a in arrays.items()}
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: state does not match the stored configuration "
            f"(missing {missing}, unexpected {unexpected})"
        )
    return model
