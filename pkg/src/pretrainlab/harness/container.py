"""Binary weight container.

Layout::

    pretrainlab-weights 1\n          magic and format version
    <count>\n                        number of tensors
    <name> <rows> <cols>\n           one line per tensor
    <data>                           little-endian float64, row-major,
                                     tensors concatenated in header order

Names are non-empty ASCII without whitespace.  The file length must equal
the header length plus ``8 * Σ rows·cols`` exactly.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from ..errors import ContainerFormatError, ValidationError

MAGIC = b"pretrainlab-weights"
VERSION = 1
_NAME = re.compile(r"^[!-~]+$")

__all__ = ["save_weights", "load_weights", "encode", "decode"]


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    header = [f"{MAGIC.decode()} {VERSION}", str(len(tensors))]
    blobs = []
    for name, t in tensors.items():
        if not _NAME.match(name):
            raise ValidationError(f"invalid tensor name {name!r}")
        a = np.asarray(t, dtype=np.float64)
        if a.ndim != 2:
            raise ValidationError(f"tensor {name!r} must be 2-D, got shape {a.shape}")
        header.append(f"{name} {a.shape[0]} {a.shape[1]}")
        blobs.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return ("\n".join(header) + "\n").encode("ascii") + b"".join(blobs)


def _line(buf: bytes, pos: int, what: str) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ContainerFormatError(f"unterminated {what} line", pos)
    try:
        return buf[pos:end].decode("ascii"), end + 1
    except UnicodeDecodeError:
        raise ContainerFormatError(f"non-ASCII bytes in {what} line", pos) from None


def decode(buf: bytes) -> dict[str, np.ndarray]:
    text, pos = _line(buf, 0, "magic")
    parts = text.split(" ")
    if len(parts) != 2 or parts[0] != MAGIC.decode():
        raise ContainerFormatError("not a weight container (bad magic)", 0)
    if parts[1] != str(VERSION):
        raise ContainerFormatError(f"unsupported format version {parts[1]!r}", len(MAGIC) + 1)
    start = pos
    text, pos = _line(buf, pos, "count")
    if not text.isdigit():
        raise ContainerFormatError(f"bad tensor count {text!r}", start)
    count = int(text)
    specs = []
    for _ in range(count):
        start = pos
        text, pos = _line(buf, pos, "tensor")
        parts = text.split(" ")
        if (len(parts) != 3 or not _NAME.match(parts[0]) or not parts[1].isdigit()
                or not parts[2].isdigit()):
            raise ContainerFormatError(f"malformed tensor line {text!r}", start)
        if parts[0] in (s[0] for s in specs):
            raise ContainerFormatError(f"duplicate tensor name {parts[0]!r}", start)
        specs.append((parts[0], int(parts[1]), int(parts[2])))
    need = 8 * sum(r * c for _, r, c in specs)
    have = len(buf) - pos
    if have < need:
        raise ContainerFormatError(
            f"truncated data: header declares {need} bytes, found {have}", len(buf))
    if have > need:
        raise ContainerFormatError(f"{have - need} trailing bytes after data", pos + need)
    out = {}
    for name, r, c in specs:
        nbytes = 8 * r * c
        out[name] = np.frombuffer(buf, dtype="<f8", count=r * c, offset=pos) \
            .astype(np.float64).reshape(r, c)
        pos += nbytes
    return out


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load_weights(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
