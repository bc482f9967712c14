"""
Training and evaluation loops
=============================

All randomness comes from one root seed: `make_rngs` spawns independent
streams for parameter init, shuffling and masking/dropout, so an identical
TrainConfig reproduces the metric history bit for bit.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from autograd.tensor import Tensor, backward, log_softmax
from errors import ContractError
from models.data_models import FusionMode, MetricRow, TrainConfig
from poolers.classifiers import TemporalClassifier, build_classifier
from services.optimizers import PlateauSchedulerState, build_optimizer, optimizer_step, plateau_step
from services.synthetic_data import SyntheticDataset, TwoStreamDataset, make_two_stream

logger = logging.getLogger(__name__)

Dataset = Union[SyntheticDataset, TwoStreamDataset]
METRIC_COLUMNS = ["epoch", "split", "loss", "top1", "lr"]


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch"""
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(f"labels {labels.tolist()} out of range for {num_classes} classes")
    log_probs = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        if labels.ndim != 0:
            raise ContractError("unbatched logits take a single label")
        return -log_probs[int(labels)]
    if labels.shape != logits.shape[:-1]:
        raise ContractError(f"expected {logits.shape[:-1]} labels, got {labels.shape}")
    picked = log_probs[np.arange(labels.shape[0]), labels]
    return -picked.mean()


@dataclass
class Rngs:
    init: np.random.Generator
    shuffle: np.random.Generator
    noise: np.random.Generator


def make_rngs(seed: int) -> Rngs:
    init, shuffle, noise = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    return Rngs(init, shuffle, noise)


@dataclass
class MetricHistory:
    rows: List[MetricRow] = field(default_factory=list)

    def add(self, epoch: int, split: str, loss: float, top1: float, lr: float) -> None:
        self.rows.append(MetricRow(epoch=epoch, split=split, loss=loss, top1=top1, lr=lr))

    def __len__(self) -> int:
        return len(self.rows)

    def final(self, split: str) -> Optional[MetricRow]:
        matches = [row for row in self.rows if row.split == split]
        return matches[-1] if matches else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows], columns=METRIC_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def prepare_dataset(ds: SyntheticDataset, cfg: TrainConfig, seed_offset: int = 0) -> Dataset:
    """Derive the two-stream view when the model fuses streams"""
    if cfg.model.fusion is FusionMode.NONE:
        return ds
    return make_two_stream(ds, cfg.model.fusion_alpha, cfg.model.fast_dim, cfg.seed + seed_offset)


def build_model(cfg: TrainConfig, ds: Dataset) -> TemporalClassifier:
    spec = cfg.model
    if isinstance(ds, TwoStreamDataset):
        spec = spec.model_copy(update={"fast_dim": ds.fast_dim, "fusion_alpha": ds.speed_ratio})
    return build_classifier(spec, ds.steps, ds.dim, ds.n_classes, make_rngs(cfg.seed).init, cfg.dtype)


def _batches(n: int, batch_size: int, order: Optional[np.ndarray] = None):
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(model: TemporalClassifier, ds: Dataset, batch_size: int = 32, dtype=None) -> Tuple[float, float]:
    """(mean loss, top-1) in eval mode"""
    was_training = model.training
    model.eval()
    total_loss, correct = 0.0, 0
    try:
        for idx in _batches(len(ds), batch_size):
            out = model(ds.batch(idx, dtype))
            labels = ds.labels[idx]
            total_loss += cross_entropy(out.logits, labels).item() * len(idx)
            correct += int(np.sum(out.predicted == labels))
    finally:
        model.train(was_training)
    n = max(len(ds), 1)
    return total_loss / n, correct / n


def train(model: TemporalClassifier, ds: Dataset, cfg: TrainConfig,
          eval_ds: Optional[Dataset] = None) -> MetricHistory:
    """
    Seeded mini-batch training.

    One `train` row per epoch, plus a `test` row when `eval_ds` is given.
    The plateau scheduler watches the test loss if available, else the
    train loss.
    """
    history = MetricHistory()
    if len(ds) == 0:
        raise ContractError("cannot train on an empty dataset")
    if cfg.epochs == 0:
        return history

    rngs = make_rngs(cfg.seed)
    params = model.parameters()
    optimizer = build_optimizer(cfg.optimizer, params)
    scheduler = PlateauSchedulerState.from_config(cfg.scheduler, optimizer.lr)
    n = len(ds)

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        lr = optimizer.lr
        total_loss, correct = 0.0, 0
        for idx in _batches(n, cfg.batch_size, rngs.shuffle.permutation(n)):
            labels = ds.labels[idx]
            out = model(ds.batch(idx, cfg.dtype), rngs.noise)
            loss = cross_entropy(out.logits, labels)
            grads = backward(loss, wrt=params)
            optimizer_step(params, grads, optimizer)
            total_loss += loss.item() * len(idx)
            correct += int(np.sum(out.predicted == labels))
        history.add(epoch, "train", total_loss / n, correct / n, lr)
        monitored = total_loss / n
        message = f"epoch {epoch}: train loss {total_loss / n:.4f} top1 {correct / n:.3f}"

        if eval_ds is not None:
            eval_loss, eval_top1 = evaluate(model, eval_ds, cfg.batch_size, cfg.dtype)
            history.add(epoch, "test", eval_loss, eval_top1, lr)
            monitored = eval_loss
            message += f" | test loss {eval_loss:.4f} top1 {eval_top1:.3f}"

        if cfg.scheduler.enabled:
            optimizer.lr = plateau_step(scheduler, monitored)
        logger.info(f"{message} | lr {lr:g}")

    return history
