"""Binary checkpoint container.

Layout (all integers little-endian):

    magic     4 bytes  b"MTCK"
    version   uint32   currently 1
    d         uint32   model width
    heads     uint32
    head_dim  uint32
    vocab     uint32   symbol count
    symbols   vocab x (uint16 length + UTF-8 bytes)
    blocks    uint32   block count
    per block: uint16 name length + UTF-8 name,
               uint32 rows, uint32 cols,
               rows * cols float64 values, row-major

Weight block names are dotted paths ("decoder.blocks.0.self.q.h1"), so a
loader can rebuild a parameter dict without knowing the model layout in
advance.  The file is self-describing for shapes; semantic dimension
checks (does this block fit the configured model?) belong to the caller.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "CheckpointDims", "save_checkpoint", "load_checkpoint"]

_MAGIC = b"MTCK"
_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or mismatched checkpoint files."""


@dataclass(frozen=True)
class CheckpointDims:
    d: int
    heads: int
    head_dim: int
    vocab_size: int


def save_checkpoint(
    path: str | Path,
    dims: CheckpointDims,
    vocab: list[str],
    blocks: dict[str, np.ndarray],
) -> None:
    if len(vocab) != dims.vocab_size:
        raise CheckpointError(
            f"vocab length {len(vocab)} does not match header vocab_size {dims.vocab_size}"
        )
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<5I", _VERSION, dims.d, dims.heads, dims.head_dim, dims.vocab_size)
    for symbol in vocab:
        raw = symbol.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    out += struct.pack("<I", len(blocks))
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name], dtype=np.float64)
        if arr.ndim != 2:
            raise CheckpointError(f"block {name!r} is not 2-D (shape {arr.shape})")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<2I", arr.shape[0], arr.shape[1])
        out += arr.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated checkpoint (needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf)})"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> tuple[CheckpointDims, list[str], dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    r = _Reader(data, str(path))
    if r.take(4) != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, d, heads, head_dim, vocab_size = r.unpack("<5I")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (want {_VERSION})")
    vocab: list[str] = []
    for _ in range(vocab_size):
        (n,) = r.unpack("<H")
        vocab.append(r.take(n).decode("utf-8"))
    (n_blocks,) = r.unpack("<I")
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        rows, cols = r.unpack("<2I")
        raw = r.take(rows * cols * 8)
        blocks[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after last block")
    return CheckpointDims(d, heads, head_dim, vocab_size), vocab, blocks
