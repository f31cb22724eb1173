"""Self-describing little-endian binary container for parameters and traces.

Layout::

    b"SACM"                      magic
    u32  format version (1)
    u32  kind                    1 model, 2 trace cache, 3 training state
    u32  n_layers, d_model, n_heads, vocab_size, max_seq_len
    i64  init_seed
    u32  meta length, then that many bytes of UTF-8 JSON (vocabulary, step, index ...)
    u32  block count
    per block:
        u16 name length, name (UTF-8), u8 ndim, u32 dims[ndim],
        float64 data in C order
    u32  CRC32 of every preceding byte

Model checkpoints store parameter blocks in :func:`sacm.model.parameter_shapes`
order.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, IoFailure
from .model import ModelConfig, ModelSnapshot, parameter_shapes

MAGIC = b"SACM"
FORMAT_VERSION = 1
KIND_MODEL, KIND_TRACES, KIND_TRAIN_STATE = 1, 2, 3

_HEAD = struct.Struct("<4sII5Iq")


def encode(kind: int, config: ModelConfig, blocks: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    parts = [_HEAD.pack(MAGIC, FORMAT_VERSION, kind, config.n_layers, config.d_model, config.n_heads,
                        config.vocab_size, config.max_seq_len, config.init_seed)]
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    parts.append(struct.pack("<I", len(meta_bytes)) + meta_bytes)
    parts.append(struct.pack("<I", len(blocks)))
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes, expected_kind: int | None = None):
    """Return ``(kind, config, meta, blocks)``; raises CorruptCheckpoint on any defect."""
    if len(data) < _HEAD.size + 12:
        raise CorruptCheckpoint("file too short to hold a header")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    magic, version, kind, *dims, seed = _HEAD.unpack_from(body, 0)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format version {version}")
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("CRC32 mismatch (truncated or corrupted file)")
    if expected_kind is not None and kind != expected_kind:
        raise CorruptCheckpoint(f"expected container kind {expected_kind}, found {kind}")
    try:
        config = ModelConfig(*dims, init_seed=seed)
        off = _HEAD.size
        (mlen,) = struct.unpack_from("<I", body, off)
        off += 4
        meta = json.loads(body[off:off + mlen].decode())
        off += mlen
        (nblocks,) = struct.unpack_from("<I", body, off)
        off += 4
        blocks = {}
        for _ in range(nblocks):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            blocks[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"malformed container body: {exc}") from exc
    if off != len(body):
        raise CorruptCheckpoint("trailing bytes after last block")
    return kind, config, meta, blocks


def atomic_write(path: str | Path, data: bytes) -> None:
    """Write via a temporary file and rename, so readers never see partial files."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def save_checkpoint(model: ModelSnapshot, path: str | Path) -> None:
    atomic_write(path, encode(KIND_MODEL, model.config, model.params, {"vocab": list(model.vocab)}))


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> ModelSnapshot:
    _, config, meta, blocks = decode(read_bytes(path), KIND_MODEL)
    if expect is not None and expect != config:
        raise CorruptCheckpoint(f"checkpoint config {config} does not match expected {expect}")
    shapes = parameter_shapes(config)
    if list(blocks) != list(shapes):
        raise CorruptCheckpoint("parameter blocks are missing or out of order")
    for name, shape in shapes.items():
        if blocks[name].shape != shape:
            raise CorruptCheckpoint(f"{name}: stored shape {blocks[name].shape}, config implies {shape}")
    return ModelSnapshot(config, blocks, tuple(meta.get("vocab", ())))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(read_bytes(path)).hexdigest()


def model_digest(model: ModelSnapshot) -> str:
    return hashlib.sha256(encode(KIND_MODEL, model.config, model.params, {"vocab": list(model.vocab)})).hexdigest()
