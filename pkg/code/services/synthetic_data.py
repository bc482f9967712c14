"""
Synthetic feature-sequence tasks
================================

Two binary tasks over [T x D] sequences built from i.i.d. N(0, 1) noise rows
and two fixed marker vectors a = 3*e_0 and b = 3*e_1:

- order: a and b both appear once; the label says which comes first. The
  multiset of rows does not depend on the label, so any permutation
  invariant pooler sits at chance.
- bag: only the class marker appears (at max(1, T // 2) positions); the
  label is recoverable from the temporal mean.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from autograd.tensor import Tensor, resolve_dtype
from errors import ConfigError, DimensionError
from models.data_models import TaskKind
from poolers.fusion import TwoStreamFeatures

logger = logging.getLogger(__name__)

MARKER_SCALE = 3.0
FAST_NOISE_STD = 0.1


@dataclass
class SyntheticDataset:
    """features [N x T x D] float32, labels [N]"""
    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 2
    task_kind: TaskKind = TaskKind.ORDER
    seed: Optional[int] = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 3:
            raise DimensionError("SyntheticDataset", self.features.shape, detail="features must be [N x T x D]")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError("SyntheticDataset", self.features.shape, self.labels.shape,
                                 detail="one label per sample")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def steps(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    def batch(self, indices: Sequence[int], dtype=None) -> Tensor:
        return Tensor(self.features[np.asarray(indices)].astype(resolve_dtype(dtype)))

    def class_balance(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes) / max(len(self), 1)


@dataclass
class TwoStreamDataset:
    """Slow [N x T x D] and fast [N x alpha*T x D_f] features sharing labels"""
    slow: np.ndarray
    fast: np.ndarray
    labels: np.ndarray
    speed_ratio: int = 4
    n_classes: int = 2

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def steps(self) -> int:
        return self.slow.shape[1]

    @property
    def dim(self) -> int:
        return self.slow.shape[2]

    @property
    def fast_dim(self) -> int:
        return self.fast.shape[2]

    def batch(self, indices: Sequence[int], dtype=None) -> TwoStreamFeatures:
        idx = np.asarray(indices)
        dtype = resolve_dtype(dtype)
        return TwoStreamFeatures(Tensor(self.slow[idx].astype(dtype)), Tensor(self.fast[idx].astype(dtype)),
                                 self.speed_ratio)


def marker_vectors(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Orthogonal markers a, b of norm 3"""
    a = np.zeros(dim)
    b = np.zeros(dim)
    a[0] = MARKER_SCALE
    b[1] = MARKER_SCALE
    return a, b


def _validate(n: int, T: int, D: int) -> None:
    if n < 1 or T < 3 or D < 4:
        raise ConfigError(f"need n >= 1, T >= 3, D >= 4; got n={n}, T={T}, D={D}")


def gen_order_task(n: int, T: int, D: int, seed: int) -> SyntheticDataset:
    _validate(n, T, D)
    rng = np.random.default_rng(seed)
    a, b = marker_vectors(D)
    features = rng.standard_normal((n, T, D))
    labels = rng.integers(0, 2, size=n)
    # two distinct positions per sample
    positions = np.argsort(rng.random((n, T)), axis=1)[:, :2]
    first, second = positions.min(axis=1), positions.max(axis=1)
    a_pos = np.where(labels == 0, first, second)
    b_pos = np.where(labels == 0, second, first)
    rows = np.arange(n)
    features[rows, a_pos] = a
    features[rows, b_pos] = b
    logger.info(f"✅ order task: n={n}, T={T}, D={D}, seed={seed}")
    return SyntheticDataset(features, labels, 2, TaskKind.ORDER, seed)


def gen_bag_task(n: int, T: int, D: int, seed: int) -> SyntheticDataset:
    _validate(n, T, D)
    rng = np.random.default_rng(seed)
    a, b = marker_vectors(D)
    features = rng.standard_normal((n, T, D))
    labels = rng.integers(0, 2, size=n)
    copies = max(1, T // 2)
    positions = np.argsort(rng.random((n, T)), axis=1)[:, :copies]
    markers = np.where(labels[:, None] == 0, a[None, :], b[None, :])
    for k in range(copies):
        features[np.arange(n), positions[:, k]] = markers
    logger.info(f"✅ bag task: n={n}, T={T}, D={D}, seed={seed}")
    return SyntheticDataset(features, labels, 2, TaskKind.BAG, seed)


def generate(task: TaskKind, n: int, T: int, D: int, seed: int) -> SyntheticDataset:
    task = TaskKind(task)
    return gen_order_task(n, T, D, seed) if task is TaskKind.ORDER else gen_bag_task(n, T, D, seed)


def make_two_stream(ds: SyntheticDataset, alpha: int = 4, fast_dim: int = 8, seed: int = 0) -> TwoStreamDataset:
    """
    Fast stream: each slow row repeated `alpha` times, projected to
    `fast_dim` channels by a seeded random matrix, plus N(0, 0.1^2) noise.
    """
    if alpha < 1 or fast_dim < 1:
        raise ConfigError(f"alpha and fast_dim must be >= 1, got {alpha}, {fast_dim}")
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((ds.dim, fast_dim)) / np.sqrt(ds.dim)
    fast = np.repeat(ds.features.astype(np.float64), alpha, axis=1) @ projection
    fast += FAST_NOISE_STD * rng.standard_normal(fast.shape)
    return TwoStreamDataset(ds.features, fast.astype(np.float32), ds.labels, alpha, ds.n_classes)
