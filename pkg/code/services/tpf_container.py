"""
TPF1 binary container for feature-sequence datasets
===================================================

Layout (little-endian):

    magic      4 bytes  b"TPF1"
    version    u16      1
    N, T, D    u32 x 3
    n_classes  u32
    dtype      u8       0 = float32
    task       u8       0 = order, 1 = bag
    labels     u32[N]
    features   float32[N*T*D], row-major
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from errors import BadMagicError, DatasetFormatError, TruncatedPayloadError, VersionMismatchError
from models.data_models import TaskKind
from services.synthetic_data import SyntheticDataset

logger = logging.getLogger(__name__)

MAGIC = b"TPF1"
VERSION = 1
DTYPE_FLOAT32 = 0
HEADER = struct.Struct("<4sHIIIIBB")

PathLike = Union[str, Path]


def serialize(ds: SyntheticDataset) -> bytes:
    N, T, D = ds.features.shape
    header = HEADER.pack(MAGIC, VERSION, N, T, D, ds.n_classes, DTYPE_FLOAT32, ds.task_kind.code)
    labels = ds.labels.astype("<u4").tobytes()
    features = np.ascontiguousarray(ds.features, dtype="<f4").tobytes()
    return header + labels + features


def deserialize(payload: bytes) -> SyntheticDataset:
    if len(payload) >= len(MAGIC) and payload[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {payload[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(payload) < HEADER.size:
        raise TruncatedPayloadError(HEADER.size, len(payload))
    magic, version, N, T, D, n_classes, dtype_code, task_code = HEADER.unpack_from(payload)
    if version != VERSION:
        raise VersionMismatchError(f"container version {version} is not supported (expected {VERSION})")
    if dtype_code != DTYPE_FLOAT32:
        raise DatasetFormatError(f"unknown dtype code {dtype_code}")
    if task_code not in (0, 1):
        raise DatasetFormatError(f"unknown task code {task_code}")

    expected = HEADER.size + 4 * N + 4 * N * T * D
    if len(payload) < expected:
        raise TruncatedPayloadError(expected, len(payload))
    if len(payload) > expected:
        raise DatasetFormatError(f"{len(payload) - expected} trailing bytes after the feature payload")

    labels = np.frombuffer(payload, dtype="<u4", count=N, offset=HEADER.size).astype(np.int64)
    features = np.frombuffer(payload, dtype="<f4", count=N * T * D, offset=HEADER.size + 4 * N)
    if labels.size and labels.max() >= n_classes:
        raise DatasetFormatError(f"label {labels.max()} out of range for {n_classes} classes")
    return SyntheticDataset(
        features=features.reshape(N, T, D).astype(np.float32),
        labels=labels,
        n_classes=n_classes,
        task_kind=TaskKind.from_code(task_code),
    )


def write_dataset(ds: SyntheticDataset, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(ds))
    logger.info(f"✅ wrote {len(ds)} samples to {path}")
    return path


def read_dataset(path: PathLike) -> SyntheticDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    ds = deserialize(path.read_bytes())
    logger.info(f"✅ read {len(ds)} samples from {path}")
    return ds
