"""Parameter containers: ``Parameter``, ``Module`` and the conv building blocks."""
from typing import Iterator, Optional

import numpy as np

from bev_domain_adapt.exceptions import ShapeError
from bev_domain_adapt.tensor import functional as F
from bev_domain_adapt.tensor.core import Tensor, get_default_dtype


class Parameter(Tensor):
    """Leaf tensor that an optimizer updates."""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


class Module:
    """Base class walking attributes for parameters and sub-modules in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copies values into the parameters, casting to each parameter's dtype.

        Raises:
            ShapeError: On missing, unexpected or mis-shaped entries.
        """
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(f"State mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"Parameter {name}: expected {p.shape}, got {value.shape}")
            p.data[...] = value.astype(p.dtype)


class Conv2d(Module):
    """Convolution layer with He-normal kernels and zero bias.

    Args:
        in_channels (int): Input channel count.
        out_channels (int): Output channel count.
        kernel_size (int): Square kernel extent.
        rng (np.random.Generator): Source of initial weights.
        stride (int): Spatial stride.
        padding (Optional[int]): Zero padding; defaults to ``kernel_size // 2`` ("same" at stride 1).
        dtype: Parameter dtype; defaults to the global default.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
        dtype=None,
    ):
        dtype = dtype or get_default_dtype()
        fan_in = in_channels * kernel_size * kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.weight = Parameter(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kernel_size, kernel_size)),
            dtype=dtype,
        )
        self.bias = Parameter(np.zeros(out_channels), dtype=dtype)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvStack(Module):
    """Sequence of ``conv -> relu`` blocks."""

    def __init__(self, channels: list[int], rng: np.random.Generator, kernel_size: int = 3, dtype=None):
        if len(channels) < 2:
            raise ValueError(f"ConvStack needs at least input and output channels, got {channels}")
        self.layers = [
            Conv2d(c_in, c_out, kernel_size, rng, dtype=dtype)
            for c_in, c_out in zip(channels[:-1], channels[1:])
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = F.relu(layer(x))
        return x
