"""Binary checkpoints: ``NGF1`` then (name length, name, rank, dims, float64 LE values) records."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig

MAGIC = b"NGF1"
META_STEP = "meta/step"
META_HASH = "meta/config_hash"
META_CONFIG = "meta/config_json"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    step: int = 0
    config_hash: str = ""
    config: TrainConfig | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, step: int, cfg: TrainConfig) -> Checkpoint:
        tensors = {name: p.data.copy() for name, p in model.named_parameters()}
        return cls(tensors, step, cfg.hash(), cfg)

    def load_into(self, model) -> None:
        params = dict(model.named_parameters())
        missing = set(params) - set(self.tensors)
        if missing:
            raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
        for name, p in params.items():
            value = self.tensors[name]
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} vs model {p.shape}")
            p.data[...] = value

    def build_model(self):
        from .model import GaugeFieldModel

        if self.config is None:
            raise CheckpointError("checkpoint carries no config; cannot rebuild the model")
        model = GaugeFieldModel(self.config)
        self.load_into(model)
        return model

    # -- file format --------------------------------------------------------

    def save(self, path) -> Path:
        path = Path(path)
        records = dict(self.tensors)
        records[META_STEP] = np.array([float(self.step)])
        if self.config_hash:
            records[META_HASH] = np.array([float(int(self.config_hash, 16))])
        if self.config is not None:
            raw = np.frombuffer(self.config.to_json().encode(), dtype=np.uint8)
            records[META_CONFIG] = raw.astype(np.float64)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            for name, value in records.items():
                arr = np.ascontiguousarray(value, dtype="<f8")
                key = name.encode()
                fh.write(struct.pack("<I", len(key)))
                fh.write(key)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())
        return path

    @classmethod
    def load(cls, path) -> Checkpoint:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        blob = path.read_bytes()
        if blob[:4] != MAGIC:
            raise CheckpointError(f"{path}: bad magic (not an NGF1 checkpoint)")
        pos = 4
        tensors: dict[str, np.ndarray] = {}

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(blob):
                raise CheckpointError(f"{path}: truncated checkpoint")
            out = blob[pos:pos + n]
            pos += n
            return out

        while pos < len(blob):
            (n,) = struct.unpack("<I", take(4))
            name = take(n).decode()
            (rank,) = struct.unpack("<I", take(4))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)

        step = int(tensors.pop(META_STEP, np.zeros(1))[0])
        h = tensors.pop(META_HASH, None)
        config_hash = f"{int(h[0]):012x}" if h is not None else ""
        raw = tensors.pop(META_CONFIG, None)
        config = None
        if raw is not None:
            config = TrainConfig.from_dict(json.loads(raw.astype(np.uint8).tobytes().decode()))
        return cls(tensors, step, config_hash, config)
