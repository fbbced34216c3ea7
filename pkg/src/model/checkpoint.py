"""
Checkpoint Module

Binary checkpoint layout (all integers little-endian):

    b"RFSG" | version u32 | entry count u32
    per entry: name length u16 | UTF-8 name | rank u32 | extents u32 * rank | float32 payload
    CRC-32 u32 of every preceding byte

Besides the learnable tensors a checkpoint carries reserved entries:

    __model__/config            ModelConfig fields
    __running__/<layer>/mean    normalization running statistics
    __running__/<layer>/var
    __adam__/hyper              lr, beta1, beta2, eps, step_count
    __adam__/m/<param>          Adam moments
    __adam__/v/<param>
    __trainer__/progress        epoch and step counters, contrastive beta

Scalars that must survive bit-exactly in float64 (__adam__/hyper,
__trainer__/progress) are stored as their float64 bytes viewed as float32.
"""

import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from config import ModelConfig
from errors import CorruptCheckpointError, IncompatibleCheckpointError
from gradcore import AdamState, RunningStats
from model.params import ModelParams, build_model

logger = logging.getLogger(__name__)

MAGIC = b"RFSG"
VERSION = 1
RESERVED_PREFIX = "__"


@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState
    progress: Dict[str, float] = field(default_factory=lambda: {"epoch": 0, "step": 0, "beta": 0.0})


def _as_f32_words(values: List[float]) -> np.ndarray:
    return np.asarray(values, dtype='<f8').view('<f4')


def _from_f32_words(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(array, dtype='<f4').view('<f8')


def _entries(params: ModelParams, adam: AdamState, progress: Dict[str, float]) -> List[Tuple[str, np.ndarray]]:
    cfg = params.config
    entries = [("__model__/config", np.array(
        [cfg.stages, cfg.base_width, cfg.blocks_per_stage, cfg.proj_dim, cfg.num_classes,
         cfg.input_size[0], cfg.input_size[1]], dtype=np.float32))]
    entries.extend((name, tensor.data) for name, tensor in params)
    for layer, stats in params.running.items():
        entries.append((f"__running__/{layer}/mean", stats.mean))
        entries.append((f"__running__/{layer}/var", stats.var))
    entries.append(("__adam__/hyper", _as_f32_words(
        [adam.lr, adam.beta1, adam.beta2, adam.eps, float(adam.step_count)])))
    for name, _ in params:
        if name in adam.m:
            entries.append((f"__adam__/m/{name}", adam.m[name]))
            entries.append((f"__adam__/v/{name}", adam.v[name]))
    entries.append(("__trainer__/progress", _as_f32_words(
        [float(progress.get("epoch", 0)), float(progress.get("step", 0)), float(progress.get("beta", 0.0))])))
    return entries


def encode_checkpoint(params: ModelParams, adam: AdamState, progress: Optional[Dict[str, float]] = None) -> bytes:
    entries = _entries(params, adam, progress or {})
    chunks = [MAGIC, struct.pack('<II', VERSION, len(entries))]
    for name, array in entries:
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype='<f4')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack('<I', array.ndim))
        chunks.append(struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(array.tobytes(order='C'))
    body = b"".join(chunks)
    return body + struct.pack('<I', zlib.crc32(body) & 0xFFFFFFFF)


def decode_entries(blob: bytes, origin: str = "<checkpoint>") -> Dict[str, np.ndarray]:
    """Validate framing and checksum, then return name -> float32 array in file order."""
    if len(blob) < 16:
        raise CorruptCheckpointError(f"{origin}: {len(blob)} bytes is too short for a checkpoint")
    if blob[:4] != MAGIC:
        raise IncompatibleCheckpointError(f"{origin}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from('<II', blob, 4)
    if version != VERSION:
        raise IncompatibleCheckpointError(f"{origin}: checkpoint version {version}, expected {VERSION}")
    body, stored_crc = blob[:-4], struct.unpack('<I', blob[-4:])[0]
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CorruptCheckpointError(
            f"{origin}: checksum mismatch (stored {stored_crc:08x}, computed {actual_crc:08x})")

    entries: Dict[str, np.ndarray] = {}
    offset = 12
    try:
        for _ in range(count):
            (length,) = struct.unpack_from('<H', body, offset)
            offset += 2
            name = body[offset:offset + length].decode("utf-8")
            offset += length
            (rank,) = struct.unpack_from('<I', body, offset)
            offset += 4
            shape = struct.unpack_from(f'<{rank}I', body, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if offset + size > len(body):
                raise CorruptCheckpointError(f"{origin}: entry '{name}' runs past the end of the file")
            entries[name] = np.frombuffer(body, dtype='<f4', count=size // 4, offset=offset) \
                .reshape(shape).astype(np.float32)
            offset += size
    except (struct.error, UnicodeDecodeError) as e:
        raise CorruptCheckpointError(f"{origin}: truncated or malformed entry table: {e}") from e
    if offset != len(body):
        raise CorruptCheckpointError(f"{origin}: {len(body) - offset} trailing bytes after {count} entries")
    return entries


def decode_checkpoint(blob: bytes, origin: str = "<checkpoint>") -> Checkpoint:
    entries = decode_entries(blob, origin)
    try:
        return _restore(entries, origin)
    except KeyError as e:
        raise IncompatibleCheckpointError(f"{origin}: missing entry {e}") from e


def _restore(entries: Dict[str, np.ndarray], origin: str = "<checkpoint>") -> Checkpoint:
    if "__model__/config" not in entries:
        raise IncompatibleCheckpointError(f"{origin}: no __model__/config entry")
    values = [int(v) for v in entries["__model__/config"]]
    cfg = ModelConfig(stages=values[0], base_width=values[1], blocks_per_stage=values[2], proj_dim=values[3],
                      num_classes=values[4], input_size=(values[5], values[6]))
    params = build_model(cfg, 0)

    learnable = {name: array for name, array in entries.items() if not name.startswith(RESERVED_PREFIX)}
    if set(learnable) != set(params.tensors):
        unexpected = sorted(set(learnable) ^ set(params.tensors))[:5]
        raise IncompatibleCheckpointError(f"{origin}: parameter names do not match the stored config: {unexpected}")
    for name, tensor in params:
        if learnable[name].shape != tensor.shape:
            raise IncompatibleCheckpointError(
                f"{origin}: '{name}' has shape {learnable[name].shape}, expected {tensor.shape}")
        tensor.data = learnable[name].copy()
    for layer in params.running:
        stats = RunningStats(params.running[layer].mean.shape[0])
        stats.mean = entries[f"__running__/{layer}/mean"].copy()
        stats.var = entries[f"__running__/{layer}/var"].copy()
        params.running[layer] = stats

    lr, beta1, beta2, eps, step_count = _from_f32_words(entries["__adam__/hyper"])
    adam = AdamState(lr=float(lr), beta1=float(beta1), beta2=float(beta2), eps=float(eps),
                     step_count=int(step_count))
    for name, _ in params:
        if f"__adam__/m/{name}" in entries:
            adam.m[name] = entries[f"__adam__/m/{name}"].copy()
            adam.v[name] = entries[f"__adam__/v/{name}"].copy()
    progress = _from_f32_words(entries["__trainer__/progress"])
    if len(progress) not in (2, 3):
        raise IncompatibleCheckpointError(f"{origin}: progress entry holds {len(progress)} values")
    beta = float(progress[2]) if len(progress) == 3 else 0.0
    return Checkpoint(params, adam, {"epoch": int(progress[0]), "step": int(progress[1]), "beta": beta})


def save_checkpoint(params: ModelParams, adam: AdamState, path: Union[str, Path],
                    progress: Optional[Dict[str, float]] = None) -> None:
    path = Path(path)
    blob = encode_checkpoint(params, adam, progress)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
    except OSError as e:
        raise OSError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info("Saved checkpoint %s (%d bytes)", path, len(blob))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise OSError(f"Cannot read checkpoint {path}: {e}") from e
    checkpoint = decode_checkpoint(blob, origin=str(path))
    logger.debug("Loaded checkpoint %s at step %d", path, checkpoint.progress["step"])
    return checkpoint
