"""Reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation is a ``Function`` subclass: ``forward`` works on
raw arrays, ``backward`` maps the upstream gradient to one gradient per parent.
``Function.apply`` wires the result into the graph, and ``Graph`` replays the
recorded operations in reverse topological order.
"""
import logging
from contextlib import contextmanager
from typing import Iterator, Optional, Sequence

import numpy as np

from bev_domain_adapt.exceptions import ShapeError

logger = logging.getLogger(__name__)

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_default_dtype = np.dtype(np.float64)


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    """Sets the dtype used for tensors created without an explicit dtype.

    Args:
        dtype: ``np.float32``, ``np.float64`` or the precision names ``"f32"`` / ``"f64"``.
    """
    global _default_dtype
    _default_dtype = resolve_dtype(dtype)


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        dtype = {"f32": np.float32, "f64": np.float64}.get(dtype, dtype)
    dtype = np.dtype(dtype)
    if dtype not in _SUPPORTED_DTYPES:
        raise ValueError(f"Unsupported tensor dtype {dtype}; use float32 or float64")
    return dtype


@contextmanager
def default_dtype(dtype) -> Iterator[np.dtype]:
    """Temporarily switches the default tensor dtype."""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield get_default_dtype()
    finally:
        set_default_dtype(previous)


class Tensor:
    """Dense n-dimensional value node in the autodiff graph.

    Attributes:
        data (np.ndarray): Values, float32 or float64.
        requires_grad (bool): Whether gradients are tracked for this node.
        grad (Optional[np.ndarray]): Gradient of the last backward pass, same shape as ``data``.
        name (Optional[str]): Optional label, used for parameters.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_ctx")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None,
        _ctx: Optional["Function"] = None,
    ):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in _SUPPORTED_DTYPES:
                dtype = data.dtype
            else:
                dtype = get_default_dtype()
        self.data = np.ascontiguousarray(data, dtype=resolve_dtype(dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx = _ctx

    def __repr__(self):
        label = f", name='{self.name}'" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Back-propagates from this tensor through the recorded graph.

        Args:
            grad: Upstream gradient; defaults to ones for single-element tensors.

        Raises:
            ShapeError: If no gradient is given for a non-scalar tensor or it has the wrong shape.
        """
        Graph(self).backward(grad)

    # Operator sugar; implementations live in functional.py
    def __add__(self, other):
        from bev_domain_adapt.tensor import functional as F
        return F.add(self, other) if isinstance(other, Tensor) else F.shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from bev_domain_adapt.tensor import functional as F
        return F.sub(self, other) if isinstance(other, Tensor) else F.shift(self, -float(other))

    def __rsub__(self, other):
        from bev_domain_adapt.tensor import functional as F
        return F.shift(F.scale(self, -1.0), float(other))

    def __mul__(self, other):
        from bev_domain_adapt.tensor import functional as F
        return F.mul(self, other) if isinstance(other, Tensor) else F.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from bev_domain_adapt.tensor import functional as F
        return F.scale(self, -1.0)

    def __getitem__(self, index):
        from bev_domain_adapt.tensor import functional as F
        return F.take(self, index)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class Function:
    """One recorded operation: forward on arrays, backward to parent gradients."""

    def __init__(self, *parents: Tensor):
        self.parents: tuple[Tensor, ...] = parents
        self.saved: tuple = ()

    def save_for_backward(self, *values) -> None:
        self.saved = values

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = [as_tensor(x) for x in inputs]
        fn = cls(*tensors)
        out = fn.forward(*[t.data for t in tensors], **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, dtype=out.dtype, _ctx=fn if requires_grad else None)


class Graph:
    """Topologically ordered record of the operations reachable from a root tensor.

    Attributes:
        root (Tensor): Tensor the graph was built from.
        nodes (list[Tensor]): Gradient-tracking tensors in topological order, root last.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = self._topological_order(root)

    @staticmethod
    def _topological_order(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        visited: set[int] = set()
        # iterative DFS; conv stacks make recursion depth unpredictable
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in reversed(node._ctx.parents):
                    if id(parent) not in visited and parent.requires_grad:
                        stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        root = self.root
        if not root.requires_grad:
            raise ValueError("backward() called on a tensor that does not require grad")
        if grad is None:
            if root.size != 1:
                raise ShapeError(f"backward() needs an explicit gradient for shape {root.shape}")
            grad = np.ones_like(root.data)
        grad = np.asarray(grad, dtype=root.dtype)
        if grad.shape != root.shape:
            raise ShapeError(f"Upstream gradient shape {grad.shape} does not match tensor shape {root.shape}")

        pending: dict[int, np.ndarray] = {id(root): grad}
        for node in reversed(self.nodes):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node.is_leaf:
                node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue
            node.grad = node_grad
            parent_grads = node._ctx.backward(node_grad)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.shape:
                    raise ShapeError(
                        f"{type(node._ctx).__name__}.backward produced {parent_grad.shape} for parent {parent.shape}"
                    )
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
