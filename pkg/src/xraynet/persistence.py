"""Bit-exact binary model checkpoints.

Layout (all integers little-endian):

    magic "NNCK" | u32 version=1 | u8 model kind | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 dtype (0=float32,
                1=float64) | u8 rank | rank x u64 dims | raw LE payload
    u32 metadata count | per entry: u16 key length | UTF-8 key |
                u16 value length | UTF-8 value

Tensors are written in the model's parameter-store order (weights and
batchnorm running stats alike); metadata is sorted by key. Both choices
make serialization deterministic, so saving the same model twice yields
byte-identical files. Writes go to a temp file in the target directory
and are renamed into place.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import models
from .tensor import Tensor

MAGIC = b"NNCK"
VERSION = 1
_KIND_TO_TAG = {"baseline": 0, "densenet121": 1}
_TAG_TO_KIND = {v: k for k, v in _KIND_TO_TAG.items()}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(Exception):
    """Base class for checkpoint format problems."""


class BadMagicError(CheckpointError):
    """File does not start with the NNCK magic."""


class FormatVersionError(CheckpointError):
    """Recognized file but an unsupported format version."""


class TruncatedFileError(CheckpointError):
    """File ends before a declared field or payload."""


class TensorFormatError(CheckpointError):
    """Tensor table disagrees with itself or with the rebuilt model."""


@dataclass(frozen=True)
class StoredTensor:
    name: str
    dtype_code: int
    shape: tuple[int, ...]
    values: np.ndarray


@dataclass(frozen=True)
class Checkpoint:
    version: int
    model_kind: str
    tensors: tuple[StoredTensor, ...]
    metadata: dict[str, str]


# ---------------------------------------------------------------------------
# writing


def _encode(model: models.ModelGraph, metadata: dict[str, str]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    if model.kind not in _KIND_TO_TAG:
        raise TensorFormatError(f"model kind {model.kind!r} has no checkpoint tag")
    out += struct.pack("<B", _KIND_TO_TAG[model.kind])
    out += struct.pack("<I", len(model.params))
    for name, p in model.params.items():
        nb = name.encode("utf-8")
        arr = p.value.numpy()
        code = _DTYPE_TO_CODE[np.dtype(arr.dtype)]
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", code, arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<Q", dim)
        out += np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes()
    items = sorted(metadata.items())
    out += struct.pack("<I", len(items))
    for key, value in items:
        kb, vb = key.encode("utf-8"), str(value).encode("utf-8")
        out += struct.pack("<H", len(kb)) + kb
        out += struct.pack("<H", len(vb)) + vb
    return bytes(out)


def save(model: models.ModelGraph, path: str, metadata: dict[str, str] | None = None) -> None:
    """Write the model atomically; extra metadata merges over the config."""
    meta = dict(model.config)
    meta.update(model.extra_metadata)
    if metadata:
        meta.update({str(k): str(v) for k, v in metadata.items()})
    blob = _encode(model, meta)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".nnck-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# reading


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise TruncatedFileError(f"file ends inside {what} (need {n} bytes at offset {self.off})")
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def read_checkpoint(path: str) -> Checkpoint:
    """Parse a checkpoint file without rebuilding the model."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"{path!r} does not start with {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatVersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    tag = r.u8("model kind")
    if tag not in _TAG_TO_KIND:
        raise TensorFormatError(f"unknown model kind tag {tag}")
    tensors: list[StoredTensor] = []
    seen: set[str] = set()
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u16("tensor name length"), "tensor name").decode("utf-8")
        if name in seen:
            raise TensorFormatError(f"duplicate tensor name {name!r}")
        seen.add(name)
        code = r.u8("tensor dtype")
        if code not in _CODE_TO_DTYPE:
            raise TensorFormatError(f"tensor {name!r} has unknown dtype code {code}")
        rank = r.u8("tensor rank")
        shape = tuple(r.u64(f"dim {i} of {name!r}") for i in range(rank))
        count = 1
        for dim in shape:
            if dim < 1:
                raise TensorFormatError(f"tensor {name!r} has zero extent in shape {shape}")
            count *= dim
        dt = _CODE_TO_DTYPE[code]
        payload = r.take(count * dt.itemsize, f"payload of {name!r}")
        values = np.frombuffer(payload, dtype=dt).reshape(shape)
        tensors.append(StoredTensor(name, code, shape, values))
    metadata: dict[str, str] = {}
    for _ in range(r.u32("metadata count")):
        key = r.take(r.u16("metadata key length"), "metadata key").decode("utf-8")
        value = r.take(r.u16("metadata value length"), "metadata value").decode("utf-8")
        metadata[key] = value
    return Checkpoint(version, _TAG_TO_KIND[tag], tuple(tensors), metadata)


def _pop_config(meta: dict[str, str], kind: str) -> tuple[models.ModelGraph, dict[str, str]]:
    leftover = dict(meta)
    arch = leftover.pop("arch", kind)
    if arch != kind:
        raise TensorFormatError(f"metadata arch {arch!r} contradicts kind tag {kind!r}")

    def need(key: str) -> str:
        if key not in leftover:
            raise TensorFormatError(f"checkpoint metadata is missing config key {key!r}")
        return leftover.pop(key)

    if kind == "baseline":
        cfg = models.BaselineCnnConfig(
            in_channels=int(need("in_channels")),
            input_hw=int(need("input_hw")),
            filters=tuple(int(v) for v in need("filters").split(",")),
            classes=int(need("classes")),
        )
        return models.build_baseline_cnn(cfg), leftover
    cfg = models.DenseNetConfig(
        in_channels=int(need("in_channels")),
        input_hw=int(need("input_hw")),
        growth_rate=int(need("growth_rate")),
        stem_channels=int(need("stem_channels")),
        block_sizes=tuple(int(v) for v in need("block_sizes").split(",")),
        compression=float(need("compression")),
        classes=int(need("classes")),
    )
    return models.build_densenet121(cfg), leftover


def load(path: str) -> models.ModelGraph:
    """Rebuild the model from a checkpoint, parameters bitwise restored."""
    ck = read_checkpoint(path)
    model, leftover = _pop_config(ck.metadata, ck.model_kind)
    stored = {t.name: t for t in ck.tensors}
    expected = set(model.params)
    if set(stored) != expected:
        missing = sorted(expected - set(stored))
        extra = sorted(set(stored) - expected)
        raise TensorFormatError(f"tensor names do not match the {ck.model_kind} layout (missing {missing}, unexpected {extra})")
    for name, p in model.params.items():
        t = stored[name]
        if t.shape != p.value.shape:
            raise TensorFormatError(f"tensor {name!r} has shape {t.shape}, model expects {p.value.shape}")
        p.value = Tensor(t.values, dtype=t.values.dtype.type)
    model.extra_metadata = leftover
    return model
