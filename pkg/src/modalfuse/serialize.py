"""Little-endian tensor files ("LASF") and weight archives ("LASW").

Tensor file layout::

    magic    4 bytes  b"LASF"
    version  u16      1
    dtype    u8       0 = float32
    rank     u8       4
    extents  rank x u32
    payload  prod(extents) x f32, row-major

Weight archive layout::

    magic    4 bytes  b"LASW"
    version  u16      1
    count    u32
    count x (name_len u16, name utf-8, tensor file body)

All integers and floats are little-endian regardless of host byte order.
"""

from __future__ import annotations

import os
import struct
from collections.abc import Mapping
from typing import Iterator

import numpy as np

from .errors import FormatError, VersionError
from .tensor import Tensor

TENSOR_MAGIC = b"LASF"
ARCHIVE_MAGIC = b"LASW"
VERSION = 1
DTYPE_FLOAT32 = 0

_HEAD = struct.Struct("<4sHBB")
_ARCHIVE_HEAD = struct.Struct("<4sHI")
_NAME_LEN = struct.Struct("<H")
_F32_LE = np.dtype("<f4")


def encode_tensor(t: Tensor) -> bytes:
    dims = t.dims
    header = _HEAD.pack(TENSOR_MAGIC, VERSION, DTYPE_FLOAT32, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return header + t.data.astype(_F32_LE).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one tensor starting at ``offset``; return it and the end offset."""
    if len(buf) - offset < _HEAD.size:
        raise FormatError("truncated tensor header")
    magic, version, dtype, rank = _HEAD.unpack_from(buf, offset)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"unsupported tensor file version {version}")
    if dtype != DTYPE_FLOAT32:
        raise VersionError(f"unsupported dtype code {dtype}")
    if rank != 4:
        raise FormatError(f"tensor rank must be 4, got {rank}")
    pos = offset + _HEAD.size
    if len(buf) - pos < 4 * rank:
        raise FormatError("truncated tensor extents")
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    if min(dims) < 1:
        raise FormatError(f"tensor extents must be >= 1, got {dims}")
    nbytes = 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) - pos < nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=_F32_LE, count=nbytes // 4, offset=pos).astype(np.float32)
    return Tensor._wrap(arr.reshape(dims)), pos + nbytes


def write_tensor(path: str | os.PathLike, t: Tensor) -> None:
    """Write ``t`` as float32 (float64 tensors are rounded)."""
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def read_tensor(path: str | os.PathLike) -> Tensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor payload")
    return t


class WeightArchive(Mapping):
    """Ordered, uniquely named parameter tensors of one module instance."""

    def __init__(self, entries: Mapping[str, Tensor] | None = None):
        self._entries: dict[str, Tensor] = {}
        for name, t in (entries or {}).items():
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> None:
        if name in self._entries:
            raise FormatError(f"duplicate archive entry {name!r}")
        self._entries[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def replace(self, updates: Mapping[str, Tensor]) -> "WeightArchive":
        """Copy with some entries swapped; order is preserved."""
        out = WeightArchive()
        for name, t in self._entries.items():
            out.add(name, updates.get(name, t))
        return out

    def to_bytes(self) -> bytes:
        parts = [_ARCHIVE_HEAD.pack(ARCHIVE_MAGIC, VERSION, len(self._entries))]
        for name, t in self._entries.items():
            raw = name.encode("utf-8")
            parts.append(_NAME_LEN.pack(len(raw)) + raw + encode_tensor(t))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "WeightArchive":
        if len(buf) < _ARCHIVE_HEAD.size:
            raise FormatError("truncated archive header")
        magic, version, count = _ARCHIVE_HEAD.unpack_from(buf, 0)
        if magic != ARCHIVE_MAGIC:
            raise FormatError(f"bad archive magic {magic!r}, expected {ARCHIVE_MAGIC!r}")
        if version != VERSION:
            raise VersionError(f"unsupported archive version {version}")
        pos = _ARCHIVE_HEAD.size
        archive = cls()
        for _ in range(count):
            if len(buf) - pos < _NAME_LEN.size:
                raise FormatError("truncated archive entry")
            (n,) = _NAME_LEN.unpack_from(buf, pos)
            pos += _NAME_LEN.size
            if len(buf) - pos < n:
                raise FormatError("truncated archive entry name")
            try:
                name = buf[pos : pos + n].decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"archive entry name is not UTF-8: {exc}") from None
            pos += n
            t, pos = decode_tensor(buf, pos)
            archive.add(name, t)
        if pos != len(buf):
            raise FormatError(f"{len(buf) - pos} trailing bytes after archive entries")
        return archive

    def __repr__(self) -> str:
        return f"WeightArchive({len(self)} entries)"


def write_archive(path: str | os.PathLike, archive: WeightArchive) -> None:
    with open(path, "wb") as fh:
        fh.write(archive.to_bytes())


def read_archive(path: str | os.PathLike) -> WeightArchive:
    with open(path, "rb") as fh:
        return WeightArchive.from_bytes(fh.read())
