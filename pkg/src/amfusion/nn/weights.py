"""
AMFW weight files.

Layout (all integers unsigned 32-bit little-endian)::

    b"AMFW" | version:u8 = 1 | c0 | r | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE data (row-major)
    CRC32 of every preceding byte

The attention flag and image side are not stored; ``load_weights`` takes
them from the caller (default: attention on).
"""

import logging
import struct
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Union

import numpy as np

from src.amfusion.errors import ConfigError, DataIOError, FormatError
from src.amfusion.nn.params import RUNNING_STAT_SUFFIXES, ArchConfig, ModelParams, param_shapes
from src.amfusion.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"AMFW"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_LE_F32 = np.dtype("<f4")


def encode_weights(params: ModelParams) -> bytes:
    cfg = params.config
    chunks = [MAGIC, bytes([FORMAT_VERSION]), struct.pack("<II", cfg.base_channels, cfg.ca_reduction),
              _U32.pack(len(params))]
    for name, tensor in params.items():
        raw = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U32.pack(tensor.ndim))
        chunks.extend(_U32.pack(d) for d in tensor.shape)
        chunks.append(np.ascontiguousarray(tensor.data, dtype=_LE_F32).tobytes())
    body = b"".join(chunks)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.payload):
            raise FormatError(f"{self.source}: truncated AMFW file")
        chunk = self.payload[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode_weights(payload: bytes, source: str = "<bytes>", use_attention: bool = True) -> ModelParams:
    """
    Parse an AMFW payload into ModelParams.

    Only c0 and r are stored; the attention flag comes from the caller and
    the training image side keeps its default.

    Raises:
        FormatError: On bad magic, version, CRC, names or shapes
    """
    if len(payload) < len(MAGIC) + 1 + 16:
        raise FormatError(f"{source}: file too short to be AMFW")
    body, trailer = payload[:-4], payload[-4:]
    if body[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {body[:4]!r}, expected {MAGIC!r}")
    if body[4] != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported AMFW version {body[4]}")
    stored_crc = _U32.unpack(trailer)[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise FormatError(f"{source}: CRC mismatch, file is corrupted")

    reader = _Reader(body, source)
    reader.pos = 5
    c0, r = reader.u32(), reader.u32()
    try:
        config = ArchConfig(base_channels=c0, ca_reduction=r, use_attention=use_attention)
    except ConfigError as exc:
        raise FormatError(f"{source}: invalid architecture header: {exc}") from exc
    expected = param_shapes(config)
    count = reader.u32()
    if count != len(expected):
        raise FormatError(f"{source}: {count} tensors stored, architecture needs {len(expected)}")

    tensors = OrderedDict()
    for _ in range(count):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: tensor name is not UTF-8") from exc
        if name not in expected or name in tensors:
            raise FormatError(f"{source}: unexpected tensor name {name!r}")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        if shape != expected[name]:
            raise FormatError(f"{source}: tensor {name} has shape {shape}, expected {expected[name]}")
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(4 * size), dtype=_LE_F32).reshape(shape)
        tensors[name] = Tensor(data, requires_grad=not name.endswith(RUNNING_STAT_SUFFIXES), name=name)
    if reader.pos != len(body):
        raise FormatError(f"{source}: {len(body) - reader.pos} trailing bytes after the last tensor")
    if list(tensors) != list(expected):
        tensors = OrderedDict((n, tensors[n]) for n in expected)
    return ModelParams(config, tensors)


def save_weights(params: ModelParams, path: Union[str, Path]):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_weights(params))
    except OSError as exc:
        raise DataIOError(f"cannot write weights to {path}: {exc}") from exc
    logger.info("saved weights path=%s tensors=%d", path, len(params))


def load_weights(path: Union[str, Path], use_attention: bool = True) -> ModelParams:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read weights from {path}: {exc}") from exc
    params = decode_weights(payload, str(path), use_attention=use_attention)
    logger.info("loaded weights path=%s c0=%d r=%d", path, params.config.base_channels, params.config.ca_reduction)
    return params
