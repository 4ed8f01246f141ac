"""Binary tensor container and checkpoint serialization.

Two single-file formats, both little-endian and bit-exact:

* ``.ten`` — one float32 tensor: magic ``CTEN``, u32 version (=1), u32 ndim,
  ndim x u32 dims, then the row-major float32 data.
* checkpoint — magic ``CCKP``, u32 version (=1), u32 tensor count, then per
  tensor a u32 name length, the UTF-8 name, and an embedded ``.ten`` record;
  finally a u32-length-prefixed UTF-8 metadata blob (config snapshot, seed,
  epoch/iteration counters as ``key=value`` lines).

Files are written atomically (temp file + rename).  No compression, no
partial loads, no cross-precision conversion: storage is float32 only and
callers convert explicitly.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PersistError", "MagicError", "VersionError", "TruncatedError",
    "UnknownTensorError", "Checkpoint", "TEN_VERSION", "CHECKPOINT_VERSION",
    "write_ten", "read_ten", "save_checkpoint", "load_checkpoint",
    "atomic_write",
]

TEN_VERSION = 1
CHECKPOINT_VERSION = 1

_TEN_MAGIC = b"CTEN"
_CKPT_MAGIC = b"CCKP"


class PersistError(Exception):
    """Malformed or inconsistent on-disk data."""


class MagicError(PersistError):
    """The file does not start with the expected magic bytes."""


class VersionError(PersistError):
    """The file declares a format version this code does not read."""


class TruncatedError(PersistError):
    """The file ends before its declared contents do."""


class UnknownTensorError(PersistError):
    """A checkpoint tensor name does not match the receiving model."""


def atomic_write(path, blob: bytes) -> None:
    """Write bytes so that ``path`` is never observable half-written."""
    path = os.fspath(path)
    tmp = f"{path}.tmp-{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


class _Reader:
    """Cursor over a byte blob with truncation-checked reads."""

    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.label = label
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise TruncatedError(
                f"{self.label}: needed {n} bytes at offset {self.offset}, "
                f"file has {len(self.blob)}")
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> None:
        if self.offset != len(self.blob):
            raise PersistError(
                f"{self.label}: {len(self.blob) - self.offset} trailing bytes "
                "after declared contents")


# ---------------------------------------------------------------------------
# .ten tensor container
# ---------------------------------------------------------------------------

def _ten_bytes(arr: np.ndarray) -> bytes:
    if arr.dtype != np.float32:
        raise ValueError(f"tensor container stores float32 only, got {arr.dtype}")
    data = np.ascontiguousarray(arr, dtype="<f4")
    return b"".join([
        _TEN_MAGIC,
        struct.pack("<II", TEN_VERSION, arr.ndim),
        struct.pack(f"<{arr.ndim}I", *arr.shape),
        data.tobytes(),
    ])


def _read_ten_record(r: _Reader) -> np.ndarray:
    magic = r.take(4)
    if magic != _TEN_MAGIC:
        raise MagicError(f"{r.label}: expected {_TEN_MAGIC!r}, found {magic!r}")
    version = r.u32()
    if version != TEN_VERSION:
        raise VersionError(f"{r.label}: tensor format version {version}, "
                           f"this build reads {TEN_VERSION}")
    ndim = r.u32()
    dims = tuple(r.u32() for _ in range(ndim))
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    data = np.frombuffer(r.take(4 * count), dtype="<f4")
    return data.reshape(dims).copy()


def write_ten(arr: np.ndarray, path) -> None:
    atomic_write(path, _ten_bytes(arr))


def read_ten(path) -> np.ndarray:
    with open(path, "rb") as f:
        r = _Reader(f.read(), os.fspath(path))
    arr = _read_ten_record(r)
    r.done()
    return arr


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to resume a run bitwise: parameters of both
    networks, optimizer state, normalization buffers, the config snapshot,
    and the counters that key the RNG streams."""

    tensors: dict[str, np.ndarray]
    config: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    epoch: int = 0
    iteration: int = 0


def _meta_line(key: str, value: str) -> str:
    if "=" in key or "\n" in key:
        raise ValueError(f"metadata key {key!r} may not contain '=' or newlines")
    if "\n" in value:
        raise ValueError(f"metadata value for {key!r} may not contain newlines")
    return f"{key}={value}\n"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    parts = [_CKPT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(_ten_bytes(arr))
    meta = [_meta_line("seed", str(ckpt.seed)),
            _meta_line("epoch", str(ckpt.epoch)),
            _meta_line("iteration", str(ckpt.iteration))]
    meta += [_meta_line(f"config.{k}", v) for k, v in ckpt.config.items()]
    blob = "".join(meta).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    atomic_write(path, b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    label = os.fspath(path)
    with open(path, "rb") as f:
        r = _Reader(f.read(), label)
    magic = r.take(4)
    if magic != _CKPT_MAGIC:
        raise MagicError(f"{label}: expected {_CKPT_MAGIC!r}, found {magic!r}")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{label}: checkpoint version {version}, "
                           f"this build reads {CHECKPOINT_VERSION}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        if name in tensors:
            raise PersistError(f"{label}: duplicate tensor name {name!r}")
        tensors[name] = _read_ten_record(r)
    meta_blob = r.take(r.u32()).decode("utf-8")
    r.done()

    fields: dict[str, str] = {}
    config: dict[str, str] = {}
    for line in meta_blob.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise PersistError(f"{label}: malformed metadata line {line!r}")
        if key.startswith("config."):
            config[key[len("config."):]] = value
        else:
            fields[key] = value
    try:
        return Checkpoint(tensors=tensors, config=config,
                          seed=int(fields["seed"]), epoch=int(fields["epoch"]),
                          iteration=int(fields["iteration"]))
    except KeyError as missing:
        raise PersistError(f"{label}: metadata missing {missing} entry") from None
    except ValueError:
        raise PersistError(f"{label}: non-integer counter in metadata") from None
