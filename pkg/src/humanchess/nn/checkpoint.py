"""Checkpoint file format.

Layout (little-endian)::

    b"MAIA1"  u16 version  u32 config_len  config (UTF-8 JSON, sorted keys)
    u32 n_tensors
    n_tensors x { u16 name_len  name  u8 dtype  u8 ndim  u32 dims[ndim]  u64 nbytes  payload }
    u32 crc32 of every preceding byte
"""

from __future__ import annotations

import importlib
import json
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from ..errors import CorruptCheckpoint, IoFailure, VersionMismatch

MAGIC = b"MAIA1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}

_REGISTRY: Dict[str, Callable] = {}


def register_model(kind: str):
    """Class decorator: ``cls.from_checkpoint(config, tensors)`` rebuilds a saved net of ``kind``."""
    def deco(cls):
        _REGISTRY[kind] = cls
        return cls
    return deco


@dataclass
class Checkpoint:
    config: dict
    tensors: Dict[str, np.ndarray]


def encode_checkpoint(config: dict, tensors: Dict[str, np.ndarray]) -> bytes:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        raw_name = name.encode("utf-8")
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<Q", len(payload)) + payload)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("bad magic")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CorruptCheckpoint(f"truncated checkpoint at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    if len(data) < 4 or struct.unpack("<I", data[-4:])[0] != zlib.crc32(data[:-4]):
        raise CorruptCheckpoint("checksum mismatch (truncated or damaged file)")
    (blob_len,) = struct.unpack("<I", take(4))
    try:
        config = json.loads(take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"bad config blob: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CorruptCheckpoint(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (nbytes,) = struct.unpack("<Q", take(8))
        dtype = _DTYPES[code]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise CorruptCheckpoint(f"payload size mismatch for {name}")
        tensors[name] = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if pos != len(data) - 4:
        raise CorruptCheckpoint("trailing bytes after tensor table")
    return Checkpoint(config, tensors)


def save_checkpoint(net, path) -> None:
    """Write ``net`` (any module exposing ``config`` and ``state_dict()``)."""
    data = encode_checkpoint(net.config, net.state_dict())
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data)


def load_checkpoint(path):
    """Rebuild the saved network; its class is chosen by ``config["kind"]``."""
    ckpt = read_checkpoint(path)
    kind = ckpt.config.get("kind")
    if kind not in _REGISTRY:
        importlib.import_module("humanchess.models")
    if kind not in _REGISTRY:
        raise CorruptCheckpoint(f"unknown model kind {kind!r}")
    return _REGISTRY[kind].from_checkpoint(ckpt.config, ckpt.tensors)
