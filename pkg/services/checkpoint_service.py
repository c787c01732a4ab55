"""
Checkpoint Service

Binary checkpoint layout (little-endian):

    b"W1DC" | version u32 | arch name (u16 length + UTF-8) | tensor count u32
    per tensor: name (u16 length + UTF-8) | rank u8 | dims u64 * rank | float32 payload
    metadata: u32 length + UTF-8 JSON (epoch, best_epoch, seed, config_digest, round)

Parameters and BN running statistics are stored together, in the network's
state_dict order. Files are replaced atomically.
"""

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from services.model_zoo import ArchitectureSpec, build_architecture
from services.network import Network, NetworkStateError
from utils.atomic_io import atomic_write

logger = logging.getLogger(__name__)

MAGIC = b"W1DC"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base exception for checkpoint persistence"""
    pass


class CheckpointFormatError(CheckpointError):
    """File is truncated, has a bad magic, or an unsupported version"""
    pass


class CheckpointMismatchError(CheckpointError):
    """Checkpoint does not fit the requested architecture"""
    pass


@dataclass
class Checkpoint:
    architecture: str
    tensors: "OrderedDict[str, np.ndarray]"
    metadata: Dict[str, object] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointFormatError(f"String too long for checkpoint: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", checkpoint.version), _pack_str(checkpoint.architecture),
             struct.pack("<I", len(checkpoint.tensors))]
    for name, array in checkpoint.tensors.items():
        array = np.ascontiguousarray(array, dtype="<f4")
        if array.ndim > 0xFF:
            raise CheckpointFormatError(f"Tensor {name} has unsupported rank {array.ndim}")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(array.tobytes())
    meta = json.dumps(checkpoint.metadata, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointFormatError(f"Checkpoint truncated at byte {self.offset} (needed {size} more)")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(f"Invalid UTF-8 in checkpoint: {e}")


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointFormatError("Not a checkpoint file (bad magic)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"Unsupported checkpoint version {version}")
    architecture = reader.string()
    (count,) = reader.unpack("<I")
    tensors = OrderedDict()
    for _ in range(count):
        name = reader.string()
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).copy()
    metadata = {}
    if reader.offset < len(data):
        (length,) = reader.unpack("<I")
        try:
            metadata = json.loads(reader.take(length).decode("utf-8"))
        except ValueError as e:
            raise CheckpointFormatError(f"Invalid checkpoint metadata: {e}")
    if reader.offset != len(data):
        raise CheckpointFormatError(f"{len(data) - reader.offset} trailing bytes after checkpoint")
    return Checkpoint(architecture, tensors, metadata, version)


def save_checkpoint(network: Network, path, metadata: Optional[Dict[str, object]] = None) -> Path:
    checkpoint = Checkpoint(network.spec.name, network.state_dict(), dict(metadata or {}))
    path = Path(path)
    with atomic_write(path) as tmp:
        tmp.write_bytes(encode_checkpoint(checkpoint))
    logger.info(f"[CHECKPOINT] Saved {checkpoint.architecture} ({len(checkpoint.tensors)} tensors) to {path}")
    return path


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointFormatError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def load_checkpoint(path, spec: Optional[ArchitectureSpec] = None) -> Network:
    """
    Rebuild the network a checkpoint was saved from.

    When ``spec`` is given its name must match the stored architecture; tensor
    names and shapes are verified before any weight is replaced.
    """
    checkpoint = read_checkpoint(path)
    if spec is not None and spec.name != checkpoint.architecture:
        raise CheckpointMismatchError(
            f"Checkpoint holds {checkpoint.architecture}, requested {spec.name}"
        )
    if spec is None:
        try:
            spec = build_architecture(checkpoint.architecture)
        except Exception as e:
            raise CheckpointMismatchError(f"Checkpoint architecture {checkpoint.architecture!r}: {e}")
    seed = int(checkpoint.metadata.get("seed", 0) or 0)
    network = Network(spec, seed=seed)
    try:
        network.load_state_dict(checkpoint.tensors)
    except NetworkStateError as e:
        raise CheckpointMismatchError(str(e))
    network.eval()
    network.metadata = checkpoint.metadata
    logger.info(f"[CHECKPOINT] Loaded {spec.name} from {path}")
    return network
