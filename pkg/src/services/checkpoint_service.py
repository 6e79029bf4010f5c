"""
src/services/checkpoint_service.py
Versioned binary checkpoints.

Layout (all integers little-endian):
    magic         8 bytes  b"CAPSCKPT"
    version       uint32
    config        uint64 length + UTF-8 key-value text (model.* and state.* keys)
    record count  uint64
    per record:   uint32 name length, name bytes, uint32 rank,
                  rank x uint64 extents, float32 payload
Parameters are stored under their own names, optimizer moments as
``adam.m.<name>`` / ``adam.v.<name>``.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from src.services.export_service import atomic_write_bytes
from src.types.config import ModelConfig
from src.types.errors import (
    CheckpointConfigMismatchError,
    CheckpointCorruptError,
    CheckpointVersionError,
)
from src.types.results import TrainState
from src.utils.capsules import GraphCapsuleNetwork
from src.utils.helpers import dump_key_values, parse_key_values

MAGIC = b"CAPSCKPT"
CHECKPOINT_VERSION = 1
OPTIMIZER_PREFIX = "adam."


@dataclass
class Checkpoint:
    config: ModelConfig
    parameters: "OrderedDict[str, np.ndarray]"
    optimizer: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    epoch: int = 0
    step: int = 0
    seed: int = 0
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_model(
        cls, model: GraphCapsuleNetwork, state: Optional[TrainState] = None
    ) -> "Checkpoint":
        state = state or TrainState()
        return cls(
            config=model.config,
            parameters=OrderedDict((name, t.data.copy()) for name, t in model.parameters()),
            optimizer=OrderedDict((k, v.copy()) for k, v in state.moments.items()),
            epoch=state.epoch,
            step=state.step,
            seed=state.seed,
        )

    def build_model(self) -> GraphCapsuleNetwork:
        return GraphCapsuleNetwork(self.config, params=self.parameters)

    def train_state(self) -> TrainState:
        return TrainState(
            epoch=self.epoch,
            step=self.step,
            seed=self.seed,
            moments=OrderedDict((k, v.copy()) for k, v in self.optimizer.items()),
        )


# ---- Encoding ---------------------------------------------------------------
def _header_text(checkpoint: Checkpoint) -> str:
    state = f"state.epoch = {checkpoint.epoch}\nstate.step = {checkpoint.step}\nstate.seed = {checkpoint.seed}\n"
    return dump_key_values(checkpoint.config, prefix="model.") + state


def _encode_record(name: str, values: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    array = np.ascontiguousarray(values, dtype="<f4")
    parts = [struct.pack("<I", len(encoded)), encoded, struct.pack("<I", array.ndim)]
    parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
    parts.append(array.tobytes())
    return b"".join(parts)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    records = list(checkpoint.parameters.items()) + [
        (OPTIMIZER_PREFIX + key, value) for key, value in checkpoint.optimizer.items()
    ]
    text = _header_text(checkpoint).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", checkpoint.version),
        struct.pack("<Q", len(text)),
        text,
        struct.pack("<Q", len(records)),
    ]
    parts.extend(_encode_record(name, values) for name, values in records)
    return b"".join(parts)


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    atomic_write_bytes(path, encode_checkpoint(checkpoint))


# ---- Decoding ---------------------------------------------------------------
class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if size < 0 or end > len(self.data):
            raise CheckpointCorruptError(
                f"{self.path}: truncated while reading {what} at byte {self.offset}"
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _parse_header(text: str, path: str) -> Tuple[ModelConfig, Dict[str, int]]:
    try:
        values = parse_key_values(text)
        config = ModelConfig(**values.get("model", {}))
        state = {k: int(v) for k, v in values.get("state", {}).items()}
    except (ValidationError, ValueError) as e:
        raise CheckpointCorruptError(f"{path}: unreadable config block: {e}") from e
    return config, state


def decode_checkpoint(data: bytes, path: str = "<bytes>") -> Checkpoint:
    reader = _Reader(data, path)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = reader.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    (text_length,) = reader.unpack("<Q", "config length")
    try:
        text = reader.take(text_length, "config block").decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointCorruptError(f"{path}: config block is not UTF-8") from e
    config, state = _parse_header(text, path)
    (count,) = reader.unpack("<Q", "record count")
    parameters: "OrderedDict[str, np.ndarray]" = OrderedDict()
    optimizer: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for index in range(count):
        (name_length,) = reader.unpack("<I", f"record {index} name length")
        try:
            name = reader.take(name_length, f"record {index} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointCorruptError(f"{path}: record {index} name is not UTF-8") from e
        (rank,) = reader.unpack("<I", f"record '{name}' rank")
        extents = reader.unpack(f"<{rank}Q", f"record '{name}' extents")
        size = int(np.prod(extents)) if rank else 1
        payload = reader.take(4 * size, f"record '{name}' payload")
        values = np.frombuffer(payload, dtype="<f4").reshape(extents).astype(np.float32)
        if name.startswith(OPTIMIZER_PREFIX):
            optimizer[name[len(OPTIMIZER_PREFIX) :]] = values
        else:
            parameters[name] = values
    if reader.offset != len(data):
        raise CheckpointCorruptError(
            f"{path}: {len(data) - reader.offset} unexpected trailing bytes after the last record"
        )
    return Checkpoint(
        config=config,
        parameters=parameters,
        optimizer=optimizer,
        epoch=state.get("epoch", 0),
        step=state.get("step", 0),
        seed=state.get("seed", 0),
        version=version,
    )


def check_config(expected: ModelConfig, found: ModelConfig) -> None:
    """Raise naming the first field where ``found`` differs from ``expected``."""
    for name in type(expected).model_fields:
        want, got = getattr(expected, name), getattr(found, name)
        if want != got:
            raise CheckpointConfigMismatchError(f"model.{name}", want, got)


def load_checkpoint(path: str, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    checkpoint = decode_checkpoint(data, path)
    if expected_config is not None:
        check_config(expected_config, checkpoint.config)
    return checkpoint
