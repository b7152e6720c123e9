"""Binary storage for embedding/logit matrices and label vectors.

Two little-endian formats are supported:

``LSNN`` (matrices)::

    0-3    magic b"LSNN"
    4      version (1)
    5      dtype (0 = float32)
    6-7    reserved, zero
    8-15   rows, u64
    16-23  cols, u64
    24-27  reserved, zero
    28-    rows * cols float32, row-major

``LSNL`` (labels)::

    0-3    magic b"LSNL"
    4      version (1)
    5-7    reserved, zero
    8-15   count, u64
    16-19  num_classes, u32
    20-    count u32 labels

Matrices live in memory as C-contiguous ``float32`` numpy arrays. Downstream
arithmetic promotes to float64.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

TENSOR_MAGIC = b"LSNN"
LABEL_MAGIC = b"LSNL"
VERSION = 1
DTYPE_FLOAT32 = 0

_TENSOR_HEADER = struct.Struct("<4sBBHQQI")  # 28 bytes
_LABEL_HEADER = struct.Struct("<4sB3sQI")  # 20 bytes

PathOrFile = Union[str, os.PathLike, BinaryIO]


class FormatError(ValueError):
    """Header does not describe a file this module can read."""


class ValidationError(ValueError):
    """Data violates a matrix or label invariant."""


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        if self.num_classes < 0 or self.num_classes >= 2**32:
            raise ValidationError(f"num_classes out of range: {self.num_classes}")
        if labels.size:
            if labels.min() < 0:
                raise ValidationError("labels must be non-negative")
            if labels.max() >= self.num_classes:
                raise ValidationError(
                    f"label {int(labels.max())} >= num_classes {self.num_classes}"
                )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelVector):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(
            self.labels, other.labels
        )


@dataclass(frozen=True)
class LabeledCorpus:
    """Training-set embeddings, network outputs and labels: the kNN database."""

    embeddings: np.ndarray
    logits: np.ndarray
    labels: LabelVector

    def __post_init__(self):
        emb = as_tensor(self.embeddings)
        out = as_tensor(self.logits)
        if not (emb.shape[0] == out.shape[0] == len(self.labels)):
            raise ValidationError(
                f"row mismatch: embeddings {emb.shape[0]}, logits {out.shape[0]}, "
                f"labels {len(self.labels)}"
            )
        if out.shape[1] != self.labels.num_classes:
            raise ValidationError(
                f"logits have {out.shape[1]} columns but num_classes={self.labels.num_classes}"
            )
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "logits", out)

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels.num_classes


def as_tensor(matrix) -> np.ndarray:
    """Return `matrix` as a validated, read-only, C-contiguous float32 2-D array."""
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {arr.shape}")
    # read-only float32 arrays are shared, not copied
    if not (arr.dtype == np.float32 and arr.flags.c_contiguous and not arr.flags.writeable):
        arr = np.array(arr, dtype=np.float32, order="C")
        arr.setflags(write=False)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("matrix contains NaN or Inf")
    return arr


def _open(target: PathOrFile, mode: str):
    if hasattr(target, "read") or hasattr(target, "write"):
        return _Borrowed(target)
    return open(target, mode)


class _Borrowed:
    """Context manager that leaves a caller-owned stream open."""

    def __init__(self, stream):
        self.stream = stream

    def __enter__(self):
        return self.stream

    def __exit__(self, *exc):
        return False


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    buf = stream.read(n)
    if buf is None or len(buf) != n:
        got = 0 if buf is None else len(buf)
        raise EOFError(f"truncated {what}: expected {n} bytes, got {got}")
    return buf


def write_tensor(matrix, destination: PathOrFile) -> None:
    arr = as_tensor(matrix)
    rows, cols = arr.shape
    header = _TENSOR_HEADER.pack(TENSOR_MAGIC, VERSION, DTYPE_FLOAT32, 0, rows, cols, 0)
    with _open(destination, "wb") as f:
        f.write(header)
        f.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def read_tensor(source: PathOrFile) -> np.ndarray:
    with _open(source, "rb") as f:
        head = f.read(_TENSOR_HEADER.size)
        if head is None or len(head) < 4 or head[:4] != TENSOR_MAGIC:
            raise FormatError(f"bad magic {bytes(head[:4])!r}, expected {TENSOR_MAGIC!r}")
        if len(head) != _TENSOR_HEADER.size:
            raise EOFError("truncated LSNN header")
        _, version, dtype, reserved, rows, cols, reserved2 = _TENSOR_HEADER.unpack(head)
        if version != VERSION:
            raise FormatError(f"unsupported LSNN version {version}")
        if dtype != DTYPE_FLOAT32:
            raise FormatError(f"unsupported LSNN dtype {dtype}")
        if reserved or reserved2:
            raise FormatError("reserved header bytes are not zero")
        payload = _read_exact(f, 4 * rows * cols, "LSNN payload")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(rows, cols)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("LSNN payload contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def write_labels(labels: LabelVector, destination: PathOrFile) -> None:
    header = _LABEL_HEADER.pack(LABEL_MAGIC, VERSION, b"\0\0\0", len(labels), labels.num_classes)
    with _open(destination, "wb") as f:
        f.write(header)
        f.write(labels.labels.astype("<u4").tobytes())


def read_labels(source: PathOrFile) -> LabelVector:
    with _open(source, "rb") as f:
        head = f.read(_LABEL_HEADER.size)
        if head is None or len(head) < 4 or head[:4] != LABEL_MAGIC:
            raise FormatError(f"bad magic {bytes(head[:4])!r}, expected {LABEL_MAGIC!r}")
        if len(head) != _LABEL_HEADER.size:
            raise EOFError("truncated LSNL header")
        _, version, reserved, count, num_classes = _LABEL_HEADER.unpack(head)
        if version != VERSION:
            raise FormatError(f"unsupported LSNL version {version}")
        if reserved != b"\0\0\0":
            raise FormatError("reserved header bytes are not zero")
        payload = _read_exact(f, 4 * count, "LSNL payload")
    return LabelVector(np.frombuffer(payload, dtype="<u4"), int(num_classes))


def tensor_bytes(matrix) -> bytes:
    buf = io.BytesIO()
    write_tensor(matrix, buf)
    return buf.getvalue()


def save_corpus(corpus: LabeledCorpus, directory) -> None:
    """Write a corpus as ``embeddings.lsnn``, ``logits.lsnn`` and ``labels.lsnl``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(corpus.embeddings, d / "embeddings.lsnn")
    write_tensor(corpus.logits, d / "logits.lsnn")
    write_labels(corpus.labels, d / "labels.lsnl")


def load_corpus(directory) -> LabeledCorpus:
    d = Path(directory)
    return LabeledCorpus(
        read_tensor(d / "embeddings.lsnn"),
        read_tensor(d / "logits.lsnn"),
        read_labels(d / "labels.lsnl"),
    )
