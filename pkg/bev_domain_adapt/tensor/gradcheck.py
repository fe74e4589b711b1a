"""Central finite-difference comparison against the autodiff gradients."""
import logging
from typing import Callable, Sequence

import numpy as np

from bev_domain_adapt.exceptions import NumericalError
from bev_domain_adapt.tensor.core import Tensor

logger = logging.getLogger(__name__)

# Relative errors are taken against max(|analytic|, |numeric|, GRAD_SCALE_FLOOR),
# so gradients far below the finite-difference noise floor compare absolutely.
GRAD_SCALE_FLOOR = 1e-3


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar graph with respect to one tensor.

    Args:
        f: Zero-argument callable rebuilding the scalar graph from current parameter values.
        param: Tensor whose entries are perturbed in place (restored afterwards).
        step: Perturbation size.

    Returns:
        np.ndarray: Estimated gradient, same shape as ``param``.

    Raises:
        NumericalError: If any finite-difference evaluation is non-finite.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for idx in range(flat.size):
        original = flat[idx]
        flat[idx] = original + step
        plus = f().item()
        flat[idx] = original - step
        minus = f().item()
        flat[idx] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NumericalError(f"Non-finite finite-difference loss at entry {idx} of {param.name or 'tensor'}: {plus}, {minus}")
        out[idx] = (plus - minus) / (2.0 * step)
    return grad


def gradient_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-6) -> float:
    """Maximum relative error between autodiff and central-difference gradients.

    Args:
        f: Zero-argument callable returning a scalar tensor built from ``params``.
        params: Float64 tensors with ``requires_grad`` set.
        step: Central-difference step.

    Returns:
        float: Largest relative error over all entries of all parameters.

    Raises:
        ValueError: If a parameter is not float64 or does not require grad.
        NumericalError: If the loss, an autodiff gradient or a finite-difference evaluation is non-finite.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ValueError(f"gradient_check needs float64 tensors, got {p.dtype} for {p.name or 'tensor'}")
        if not p.requires_grad:
            raise ValueError(f"gradient_check parameter {p.name or 'tensor'} does not require grad")
        p.zero_grad()

    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError(f"Non-finite loss in gradient_check: {loss.data}")
    loss.backward()

    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(analytic).all():
            raise NumericalError(f"Non-finite autodiff gradient for {p.name or 'tensor'}")
        numeric = numerical_gradient(f, p, step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_SCALE_FLOOR)
        err = float(np.max(np.abs(analytic - numeric) / denom)) if p.size else 0.0
        logger.debug(f"gradient_check {p.name or 'tensor'}{p.shape}: max relative error {err:.3e}")
        worst = max(worst, err)
    return worst
