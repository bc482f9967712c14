# AdamW, SGD with momentum and reduce-on-plateau scheduling over plain numpy buffers

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from autograd.tensor import GradientMap, Tensor
from errors import DimensionError
from models.data_models import OptimizerConfig, OptimizerKind, SchedulerConfig

logger = logging.getLogger(__name__)

Grads = Union[GradientMap, Sequence[np.ndarray]]


def _grad_list(params: Sequence[Tensor], grads: Grads) -> List[np.ndarray]:
    if isinstance(grads, GradientMap):
        return [grads.for_tensor(p) for p in params]
    grads = list(grads)
    if len(grads) != len(params):
        raise DimensionError("optimizer step", (len(params),), (len(grads),), detail="one gradient per parameter")
    return grads


def _check_shapes(params: Sequence[Tensor], buffers: Sequence[np.ndarray]) -> None:
    for p, b in zip(params, buffers):
        if p.shape != b.shape:
            raise DimensionError("optimizer step", p.shape, b.shape)


@dataclass
class AdamwState:
    """Adam moments with decoupled weight decay"""
    lr: float
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float, **kwargs) -> "AdamwState":
        return cls(lr=lr, m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params],
                   **kwargs)


def adamw_step(params: Sequence[Tensor], grads: Grads, state: AdamwState) -> AdamwState:
    """w <- w - lr*wd*w - lr * m_hat / (sqrt(v_hat) + eps), in place"""
    grads = _grad_list(params, grads)
    _check_shapes(params, grads)
    _check_shapes(params, state.m)
    beta1, beta2 = state.betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        update = state.lr * state.weight_decay * p.data + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)
    return state


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.9
    buffers: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float, momentum: float = 0.9) -> "SgdState":
        return cls(lr=lr, momentum=momentum, buffers=[np.zeros_like(p.data) for p in params])


def sgd_step(params: Sequence[Tensor], grads: Grads, state: SgdState) -> SgdState:
    """b <- mu*b + g; w <- w - lr*b"""
    grads = _grad_list(params, grads)
    _check_shapes(params, grads)
    _check_shapes(params, state.buffers)
    for p, g, b in zip(params, grads, state.buffers):
        b *= state.momentum
        b += g
        p.data -= (state.lr * b).astype(p.dtype, copy=False)
    return state


OptimizerState = Union[AdamwState, SgdState]


def build_optimizer(cfg: OptimizerConfig, params: Sequence[Tensor]) -> OptimizerState:
    lr = cfg.resolved_lr()
    if cfg.kind is OptimizerKind.ADAMW:
        return AdamwState.for_params(params, lr, betas=tuple(cfg.betas), eps=cfg.eps, weight_decay=cfg.weight_decay)
    return SgdState.for_params(params, lr, cfg.momentum)


def optimizer_step(params: Sequence[Tensor], grads: Grads, state: OptimizerState) -> OptimizerState:
    if isinstance(state, AdamwState):
        return adamw_step(params, grads, state)
    return sgd_step(params, grads, state)


@dataclass
class PlateauSchedulerState:
    """Reduce lr by `factor` once the metric fails to improve for more than `patience` epochs"""
    lr: float
    patience: int = 5
    factor: float = 0.1
    min_lr: float = 0.0
    best: float = math.inf
    bad_epochs: int = 0
    history: List[float] = field(default_factory=list)

    @classmethod
    def from_config(cls, cfg: SchedulerConfig, lr: float) -> "PlateauSchedulerState":
        return cls(lr=lr, patience=cfg.patience, factor=cfg.factor, min_lr=cfg.min_lr)


def plateau_step(state: PlateauSchedulerState, metric: float) -> float:
    """
    Record `metric` and return the (possibly reduced) learning rate.

    A reduction multiplies lr by exactly `factor`, except that it never goes
    below `min_lr`: the step that would cross the floor lands on it, and later
    plateaus leave lr there.
    """
    state.history.append(float(metric))
    if metric < state.best:
        state.best = float(metric)
        state.bad_epochs = 0
        return state.lr
    state.bad_epochs += 1
    if state.bad_epochs > state.patience:
        reduced = max(state.lr * state.factor, state.min_lr)
        if reduced < state.lr:
            logger.info(f"⚠️ metric plateaued at {state.best:.4f}; lr {state.lr:g} -> {reduced:g}")
            state.lr = reduced
        state.bad_epochs = 0
    return state.lr
