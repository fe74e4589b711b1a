"""Momentum SGD with step-decayed learning rate and per-parameter freezing."""
import logging
from typing import Iterable, Optional, Sequence

import numpy as np

from bev_domain_adapt.exceptions import NumericalError
from bev_domain_adapt.tensor.layers import Parameter

logger = logging.getLogger(__name__)


class SGD:
    """Plain momentum SGD.

    Frozen parameters are skipped entirely (value and momentum buffer untouched),
    so their values stay bit-identical while frozen.

    Attributes:
        base_lr (float): Learning rate before decay.
        momentum (float): Momentum coefficient.
        weight_decay (float): L2 coefficient added to the gradient.
        decay_epochs (tuple[int, ...]): Epochs at which the rate is multiplied by ``gamma``.
        gamma (float): Decay factor.
        max_grad_norm (Optional[float]): Global gradient-norm clip, if set.
    """

    def __init__(
        self,
        named_params: Iterable[tuple[str, Parameter]],
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        decay_epochs: Sequence[int] = (),
        gamma: float = 0.1,
        max_grad_norm: Optional[float] = None,
    ):
        self.params: dict[str, Parameter] = dict(named_params)
        self.base_lr = lr
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_epochs = tuple(sorted(decay_epochs))
        self.gamma = gamma
        self.max_grad_norm = max_grad_norm
        self.frozen: set[str] = set()
        self._velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def set_epoch(self, epoch: int) -> float:
        drops = sum(1 for e in self.decay_epochs if epoch >= e)
        self.lr = self.base_lr * (self.gamma ** drops)
        return self.lr

    def set_frozen(self, prefix: str, frozen: bool) -> None:
        """Freezes or unfreezes every parameter whose name starts with ``prefix``."""
        names = {name for name in self.params if name.startswith(prefix)}
        if not names:
            raise KeyError(f"No parameters match prefix '{prefix}'")
        if frozen:
            self.frozen |= names
        else:
            self.frozen -= names

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def grad_norm(self) -> float:
        total = 0.0
        for name, p in self.params.items():
            if p.grad is not None and name not in self.frozen:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return float(np.sqrt(total))

    def step(self) -> float:
        """Applies one update.

        Returns:
            float: Global gradient norm before clipping.

        Raises:
            NumericalError: If any trainable gradient is non-finite.
        """
        norm = self.grad_norm()
        if not np.isfinite(norm):
            raise NumericalError("Non-finite gradient norm during optimizer step")
        clip = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            clip = self.max_grad_norm / norm
        for name, p in self.params.items():
            if name in self.frozen or p.grad is None:
                continue
            g = p.grad * clip
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self._velocity[name]
            v *= self.momentum
            v += g
            p.data -= self.lr * v
        return norm
