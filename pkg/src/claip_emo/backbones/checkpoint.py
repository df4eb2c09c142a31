"""Named-tensor checkpoint container.

Layout (all integers little-endian)::

    header   magic b"CLPE" | version u32 | tensor count u32
    tensor   name length u32 | UTF-8 name | rank u32 | dims u64 * rank
             | dtype tag u8 | flags u8 | raw data | CRC32 u32 of raw data

Flag bit 0 marks a trainable tensor. See docs/checkpoint_format.md.
"""
import hashlib
import math
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import BinaryIO, Dict, Iterable, Optional

import numpy as np

from claip_emo.backbones.encoders import make_backbone
from claip_emo.backbones.model_registry import EncoderConfig
from claip_emo.errors import (
    CheckpointChecksumError, CheckpointFormatError, CheckpointKeyError, CheckpointShapeError,
    CheckpointTruncatedError)
from claip_emo.logger import get_logger
from claip_emo.numerics.module import Module

logger = get_logger(__name__)

MAGIC = b"CLPE"
VERSION = 1
FLAG_TRAINABLE = 0x01
MAX_RANK = 8

_DTYPE_TAGS = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i8"),
}
_TAG_FOR_TYPE = {np.float32: 1, np.float64: 2, np.int64: 3}


@dataclass
class TensorRecord:
    name: str
    array: np.ndarray
    trainable: bool = False


def _dtype_tag(array: np.ndarray) -> int:
    try:
        return _TAG_FOR_TYPE[array.dtype.type]
    except KeyError:
        raise CheckpointFormatError(f"dtype {array.dtype} cannot be stored in a checkpoint")


def write_tensors(path: str, records: Iterable[TensorRecord]) -> None:
    """Writes records to path atomically (temp file then rename)."""
    records = list(records)
    tmp_path = f"{path}.tmp"
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(tmp_path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(records)))
        for record in records:
            tag = _dtype_tag(record.array)
            data = np.ascontiguousarray(record.array, dtype=_DTYPE_TAGS[tag]).tobytes()
            name = record.name.encode("utf-8")
            f.write(struct.pack("<I", len(name)))
            f.write(name)
            f.write(struct.pack("<I", record.array.ndim))
            f.write(struct.pack(f"<{record.array.ndim}Q", *record.array.shape))
            f.write(struct.pack("<BB", tag, FLAG_TRAINABLE if record.trainable else 0))
            f.write(data)
            f.write(struct.pack("<I", zlib.crc32(data) & 0xFFFFFFFF))
    os.replace(tmp_path, path)


def _read_exact(f: BinaryIO, size: int, path: str, what: str) -> bytes:
    # record sizes are untrusted
    remaining = os.fstat(f.fileno()).st_size - f.tell()
    if size > remaining:
        raise CheckpointTruncatedError(
            f"`{path}` ended while reading {what}: wanted {size} bytes, {remaining} left")
    chunk = f.read(size)
    if len(chunk) != size:
        raise CheckpointTruncatedError(
            f"`{path}` ended while reading {what}: wanted {size} bytes, got {len(chunk)}")
    return chunk


def read_tensors(path: str) -> "OrderedDict[str, TensorRecord]":
    """Reads every record, verifying magic, version and each CRC32.

    Raises:
        CheckpointFormatError: wrong magic or version, a name that is not
            UTF-8, an implausible rank, or an unknown dtype tag.
        CheckpointTruncatedError: the file ends mid-record, or a record
            claims more bytes than the file holds.
        CheckpointChecksumError: a tensor's data does not match its CRC32.
    """
    records: "OrderedDict[str, TensorRecord]" = OrderedDict()
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointFormatError(f"`{path}` is not a checkpoint (magic {magic!r}, expected {MAGIC!r})")
        version, count = struct.unpack("<II", _read_exact(f, 8, path, "header"))
        if version != VERSION:
            raise CheckpointFormatError(f"`{path}` has container version {version}, this reader supports {VERSION}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, path, "name length"))
            raw_name = _read_exact(f, name_len, path, "tensor name")
            try:
                name = raw_name.decode("utf-8")
            except UnicodeDecodeError as e:
                raise CheckpointFormatError(f"`{path}` holds a tensor name that is not UTF-8: {e}")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, path, f"rank of `{name}`"))
            if rank > MAX_RANK:
                raise CheckpointFormatError(f"tensor `{name}` claims rank {rank}, more than {MAX_RANK}")
            dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, path, f"dims of `{name}`"))
            tag, flags = struct.unpack("<BB", _read_exact(f, 2, path, f"dtype of `{name}`"))
            if tag not in _DTYPE_TAGS:
                raise CheckpointFormatError(f"tensor `{name}` has unknown dtype tag {tag}")
            dtype = _DTYPE_TAGS[tag]
            nbytes = math.prod(dims) * dtype.itemsize
            data = _read_exact(f, nbytes, path, f"data of `{name}`")
            (crc,) = struct.unpack("<I", _read_exact(f, 4, path, f"checksum of `{name}`"))
            if zlib.crc32(data) & 0xFFFFFFFF != crc:
                raise CheckpointChecksumError(f"tensor `{name}` in `{path}` failed its CRC32 check")
            array = np.frombuffer(data, dtype=dtype).reshape(dims).copy()
            records[name] = TensorRecord(name=name, array=array, trainable=bool(flags & FLAG_TRAINABLE))
    return records


def save_module(module: Module, path: str, prefix: str = "", only_trainable: bool = False) -> None:
    records = [TensorRecord(name=f"{prefix}{name}", array=p.data, trainable=p.requires_grad)
               for name, p in module.named_parameters()
               if p.requires_grad or not only_trainable]
    write_tensors(path, records)
    logger.debug(f"wrote {len(records)} tensors to {path}")


def load_module(module: Module, path: str, prefix: str = "", strict: bool = True,
                restore_flags: bool = True) -> None:
    """Loads a checkpoint into ``module`` in place.

    Args:
        prefix: stripped from stored names before matching.
        strict: when False, module tensors missing from the file are left alone.
        restore_flags: set requires_grad from each stored trainable flag.
    """
    records = read_tensors(path)
    stored: Dict[str, TensorRecord] = {}
    for name, record in records.items():
        if not name.startswith(prefix):
            raise CheckpointKeyError(f"tensor `{name}` does not carry the expected prefix `{prefix}`")
        stored[name[len(prefix):]] = record
    params = OrderedDict(module.named_parameters())
    # shapes first: a checkpoint from another preset reports its first bad tensor
    for name, record in stored.items():
        if name in params and record.array.shape != params[name].shape:
            raise CheckpointShapeError(
                f"tensor `{name}` has shape {record.array.shape} in `{path}`, "
                f"the config expects {params[name].shape}")
    unexpected = [n for n in stored if n not in params]
    missing = [n for n in params if n not in stored]
    if unexpected or (strict and missing):
        raise CheckpointKeyError(
            f"`{path}` does not match the model: missing={missing[:5]} unexpected={unexpected[:5]}")
    for name, record in stored.items():
        param = params[name]
        param.data = np.ascontiguousarray(record.array.astype(param.dtype, copy=False))
        if restore_flags:
            param.requires_grad = record.trainable


def save_checkpoint(enc: Module, path: str) -> None:
    save_module(enc, path)


def load_checkpoint(path: str, config: EncoderConfig):
    """Rebuilds an encoder for ``config`` and fills it from ``path``.

    Raises:
        CheckpointShapeError: naming the first tensor whose stored shape
            disagrees with ``config`` (for example a B checkpoint into L).
    """
    encoder = make_backbone(seed=0, config=config)
    load_module(encoder, path)
    return encoder


def checkpoint_checksum(path: str, names: Optional[Iterable[str]] = None) -> str:
    digest = hashlib.sha256()
    records = read_tensors(path)
    for name in (names if names is not None else records.keys()):
        digest.update(name.encode("utf-8"))
        digest.update(records[name].array.tobytes())
    return digest.hexdigest()
