"""Self-describing, digest-verified model checkpoints.

File layout (all integers little-endian)::

    b"EXKT" | u32 version | u32 n | n bytes of JSON metadata
    | float32 tensors: parameters, then Adam m, then Adam v, each in
      param_shapes() order
    | 32-byte SHA-256 of everything before it

The metadata carries the network config, normalisation stats, Adam
hyperparameters and step, vocoder kind, excitation calibration, training
config and provenance. JSON is written with sorted keys so equal
checkpoints serialise to equal bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import NormalizationStats
from .fileio import atomic_write_bytes
from .network import AdamState, NetConfig, check_params, param_shapes

MAGIC = b"EXKT"
FORMAT_VERSION = 1
DIGEST_BYTES = 32


class CheckpointError(ValueError):
    pass


class DigestError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ConfigMismatchError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: NetConfig
    params: dict
    adam: AdamState
    stats: NormalizationStats
    step: int = 0
    kind: str = "wavenet"
    calibration: float = 1.0       # excitation scale / exp(mean voiced log-gain)
    sample_rate: int = 24000
    frame: tuple = (480, 120)      # (frame_len, hop) used for the conditioning features
    train_config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def metadata(self) -> dict:
        return {
            "version": self.version,
            "config": self.config.to_dict(),
            "stats": self.stats.to_dict(),
            "step": int(self.step),
            "kind": self.kind,
            "calibration": float(self.calibration),
            "sample_rate": int(self.sample_rate),
            "frame": [int(v) for v in self.frame],
            "train_config": self.train_config,
            "provenance": self.provenance,
            "adam": {"lr": self.adam.lr, "beta1": self.adam.beta1, "beta2": self.adam.beta2,
                     "eps": self.adam.eps, "step": int(self.adam.step)},
            "tensor_order": ["params", "adam_m", "adam_v"],
        }

    def to_bytes(self) -> bytes:
        check_params(self.params, self.config)
        meta = json.dumps(self.metadata(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", self.version, len(meta)), meta]
        for group in (self.params, self.adam.m, self.adam.v):
            for name in param_shapes(self.config):
                parts.append(np.ascontiguousarray(group[name], dtype="<f4").tobytes())
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest()

    def digest(self) -> str:
        return self.to_bytes()[-DIGEST_BYTES:].hex()


def checkpoint_from_bytes(data: bytes, name: str = "<bytes>") -> Checkpoint:
    if len(data) < len(MAGIC) + 8 + DIGEST_BYTES or data[:4] != MAGIC:
        raise CheckpointError(f"{name}: not a checkpoint file")
    body, digest = data[:-DIGEST_BYTES], data[-DIGEST_BYTES:]
    version, n_meta = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{name}: unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise DigestError(f"{name}: content digest mismatch (file corrupted)")
    off = 12
    meta = json.loads(body[off:off + n_meta].decode("utf-8"))
    off += n_meta
    config = NetConfig(**meta["config"])
    shapes = param_shapes(config)
    groups = []
    for _ in range(3):
        g = {}
        for name_, shape in shapes.items():
            count = int(np.prod(shape))
            if off + 4 * count > len(body):
                raise CheckpointError(f"{name}: tensor payload truncated")
            g[name_] = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
            off += 4 * count
        groups.append(g)
    if off != len(body):
        raise CheckpointError(f"{name}: {len(body) - off} unexpected trailing bytes")
    a = meta["adam"]
    adam = AdamState(groups[1], groups[2], a["step"], a["lr"], a["beta1"], a["beta2"], a["eps"])
    return Checkpoint(config, groups[0], adam, NormalizationStats.from_dict(meta["stats"]),
                      meta["step"], meta["kind"], meta["calibration"], meta["sample_rate"],
                      tuple(meta["frame"]), meta["train_config"], meta["provenance"], version)


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write atomically; returns the hex digest."""
    data = ckpt.to_bytes()
    atomic_write_bytes(path, data)
    return data[-DIGEST_BYTES:].hex()


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes(), str(path))


def file_digest(path) -> str:
    """Digest stored in a checkpoint file's trailer (verified)."""
    data = Path(path).read_bytes()
    checkpoint_from_bytes(data, str(path))
    return data[-DIGEST_BYTES:].hex()
