# Central finite-difference validation of analytic gradients

import logging
from typing import Callable, Sequence

import numpy as np

from autograd.tensor import Tensor, backward
from errors import ContractError

logger = logging.getLogger(__name__)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """
    Compare backward() against (f(p+eps) - f(p-eps)) / (2 eps) element by element.

    Args:
        f: closure over `params` returning a scalar Tensor
        params: float64 tensors to perturb in place (restored afterwards)
        eps: finite-difference step

    Returns:
        float: max relative error, denominator max(|analytic|, |numeric|, 1e-8)
    """
    for p in params:
        if p.dtype != np.float64:
            raise ContractError(f"grad_check runs in double precision, got {p.dtype} for {p!r}")

    loss = f()
    if not np.array_equal(loss.data, f().data):
        raise ContractError("grad_check needs a deterministic function (is dropout or masking active?)")

    analytic = backward(loss, wrt=params)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ContractError(f"parameter {p!r} is not contiguous")
        expected = analytic[p].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            f_plus = float(f().data)
            flat[i] = original - eps
            f_minus = float(f().data)
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(expected[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)

    logger.debug(f"grad_check over {sum(p.size for p in params)} scalars: worst relative error {worst:.3e}")
    return worst
