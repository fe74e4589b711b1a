"""Differentiable operations used by the detector and the domain classifiers.

Shapes are explicit: there is no general broadcasting. Feature maps are
``C x H x W`` arrays for a single frame; spatial maps are ``H x W``.
"""
from typing import Sequence

import numpy as np

from bev_domain_adapt.exceptions import ShapeError
from bev_domain_adapt.tensor.core import Function, Tensor

BCE_EPS = 1e-7


def _require_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- elementwise -------------------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        _require_same_shape("add", a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        _require_same_shape("sub", a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        _require_same_shape("mul", a, b)
        self.save_for_backward(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return grad * b, grad * a


class Scale(Function):
    def forward(self, x, factor: float):
        self.factor = factor
        return x * x.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class Shift(Function):
    def forward(self, x, offset: float):
        return x + x.dtype.type(offset)

    def backward(self, grad):
        return (grad,)


class ReLU(Function):
    def forward(self, x):
        mask = x > 0
        self.save_for_backward(mask)
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, grad):
        (mask,) = self.saved
        return (np.where(mask, grad, grad.dtype.type(0)),)


class Sigmoid(Function):
    def forward(self, x):
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad * out * (1.0 - out),)


class GradientReversal(Function):
    """Identity forward, negated gradient backward."""

    def forward(self, x):
        return x.copy()

    def backward(self, grad):
        return (-grad,)


class Identity(Function):
    def forward(self, x):
        return x.copy()

    def backward(self, grad):
        return (grad,)


# --- reductions and reshaping ------------------------------------------------

class Sum(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.shape, grad, dtype=grad.dtype),)


class Mean(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.mean(), dtype=x.dtype)

    def backward(self, grad):
        n = int(np.prod(self.shape))
        return (np.full(self.shape, grad / n, dtype=grad.dtype),)


class Reshape(Function):
    def forward(self, x, shape: tuple[int, ...]):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Take(Function):
    """Basic (non-fancy) indexing, e.g. ``table[n]`` or ``x[2:5]``."""

    def forward(self, x, index):
        self.in_shape = x.shape
        self.index = index
        return np.array(x[index], copy=True)

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        out[self.index] += grad
        return (out,)


class Concat(Function):
    def forward(self, *arrays, axis: int = 0):
        ref = arrays[0]
        for arr in arrays[1:]:
            if arr.ndim != ref.ndim or any(
                arr.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != axis
            ):
                raise ShapeError(
                    f"concat: extents must agree off axis {axis}, got {[a.shape for a in arrays]}"
                )
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


# --- spatial operations ------------------------------------------------------

class ChannelMax(Function):
    """Per-pixel maximum over the channel axis; gradient routed to the argmax channel."""

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"channel_max expects K x H x W, got {x.shape}")
        self.shape = x.shape
        self.argmax = np.argmax(x, axis=0)
        return np.take_along_axis(x, self.argmax[None], axis=0)[0]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.put_along_axis(out, self.argmax[None], grad[None], axis=0)
        return (out,)


class MapMultiply(Function):
    """``C x H x W`` features times an ``H x W`` map broadcast over channels."""

    def forward(self, features, spatial_map):
        if features.ndim != 3 or spatial_map.shape != features.shape[1:]:
            raise ShapeError(
                f"condition: map extent {spatial_map.shape} does not match features {features.shape}"
            )
        self.save_for_backward(features, spatial_map)
        return features * spatial_map[None]

    def backward(self, grad):
        features, spatial_map = self.saved
        return grad * spatial_map[None], (grad * features).sum(axis=0)


class ExpandRow(Function):
    """``dim`` vector to a ``dim x H x W`` map with constant channels."""

    def forward(self, row, height: int, width: int):
        if row.ndim == 2 and row.shape[0] == 1:
            row = row[0]
            self.row_shape = (1, row.shape[0])
        elif row.ndim == 1:
            self.row_shape = row.shape
        else:
            raise ShapeError(f"expand_embedding expects a 1 x dim or dim row, got {row.shape}")
        return np.ascontiguousarray(np.broadcast_to(row[:, None, None], (row.shape[0], height, width)))

    def backward(self, grad):
        return (grad.sum(axis=(1, 2)).reshape(self.row_shape),)


def resize_matrix(in_size: int, out_size: int, dtype=np.float64) -> np.ndarray:
    """Linear-interpolation weights for one axis, half-pixel centers (align_corners=False).

    Returns:
        np.ndarray: ``out_size x in_size`` matrix whose rows sum to one.
    """
    weights = np.zeros((out_size, in_size), dtype=dtype)
    scale = in_size / out_size
    for o in range(out_size):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), in_size - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        weights[o, lo] += 1.0 - frac
        weights[o, hi] += frac
    return weights


class BilinearResize(Function):
    def forward(self, x, height: int, width: int):
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3:
            raise ShapeError(f"bilinear_resize expects H x W or C x H x W, got {x.shape}")
        self.squeeze = squeeze
        self.rows = resize_matrix(x.shape[1], height, x.dtype)
        self.cols = resize_matrix(x.shape[2], width, x.dtype)
        out = np.einsum("oh,chw,pw->cop", self.rows, x, self.cols, optimize=True)
        return out[0] if squeeze else out

    def backward(self, grad):
        g = grad[None] if self.squeeze else grad
        out = np.einsum("oh,cop,pw->chw", self.rows, g, self.cols, optimize=True)
        return (out[0] if self.squeeze else out,)


class Conv2d(Function):
    """Cross-correlation of a ``C x H x W`` input with ``O x C x kh x kw`` kernels.

    Implemented as one matrix product per kernel offset, which keeps the
    backward pass a mirror image of the forward pass.
    """

    def forward(self, x, kernels, bias, stride: int = 1, padding: int = 0):
        if x.ndim != 3 or kernels.ndim != 4:
            raise ShapeError(f"conv2d expects C x H x W input and O x C x kh x kw kernels, got {x.shape}, {kernels.shape}")
        if kernels.shape[1] != x.shape[0]:
            raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernels expect {kernels.shape[1]}")
        if bias.shape != (kernels.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {kernels.shape[0]} output channels")
        out_ch, _, kh, kw = kernels.shape
        padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
        height = (padded.shape[1] - kh) // stride + 1
        width = (padded.shape[2] - kw) // stride + 1
        if height <= 0 or width <= 0:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {padded.shape[1:]}")
        self.save_for_backward(padded, kernels)
        self.geometry = (stride, padding, height, width, x.shape)

        out = np.empty((out_ch, height, width), dtype=x.dtype)
        out[...] = bias[:, None, None]
        flat = out.reshape(out_ch, -1)
        for i in range(kh):
            for j in range(kw):
                window = padded[:, i:i + stride * height:stride, j:j + stride * width:stride]
                flat += kernels[:, :, i, j] @ window.reshape(window.shape[0], -1)
        return out

    def backward(self, grad):
        padded, kernels = self.saved
        stride, padding, height, width, in_shape = self.geometry
        _, in_ch, kh, kw = kernels.shape
        g = grad.reshape(grad.shape[0], -1)

        grad_padded = np.zeros_like(padded)
        grad_kernels = np.empty_like(kernels)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + stride * height, stride)
                cols = slice(j, j + stride * width, stride)
                window = padded[:, rows, cols].reshape(in_ch, -1)
                grad_kernels[:, :, i, j] = g @ window.T
                grad_padded[:, rows, cols] += (kernels[:, :, i, j].T @ g).reshape(in_ch, height, width)
        grad_bias = g.sum(axis=1)
        if padding:
            grad_x = grad_padded[:, padding:padding + in_shape[1], padding:padding + in_shape[2]]
        else:
            grad_x = grad_padded
        return np.ascontiguousarray(grad_x), grad_kernels, grad_bias


# --- losses ------------------------------------------------------------------

class BinaryCrossEntropy(Function):
    """Mean pixel-wise BCE against a constant label, with probabilities clamped to [eps, 1 - eps]."""

    def forward(self, p, target: float):
        eps = BCE_EPS
        clamped = np.clip(p, eps, 1.0 - eps)
        self.save_for_backward(p, clamped)
        self.target = float(target)
        d = self.target
        loss = -(d * np.log(clamped) + (1.0 - d) * np.log1p(-clamped))
        return np.asarray(loss.mean(), dtype=p.dtype)

    def backward(self, grad):
        p, clamped = self.saved
        d = self.target
        inside = (p >= BCE_EPS) & (p <= 1.0 - BCE_EPS)
        local = (-d / clamped + (1.0 - d) / (1.0 - clamped)) / p.size
        return (np.where(inside, local * grad, 0.0).astype(p.dtype),)


class FocalLoss(Function):
    """Penalty-reduced focal loss on probabilities against Gaussian-splatted targets.

    Positive cells are those where the target equals one; the sum is
    normalized by the positive count (at least one).
    """

    def forward(self, p, target, alpha: float = 2.0, beta: float = 4.0):
        _require_same_shape("focal_loss", p, target)
        eps = BCE_EPS
        q = np.clip(p, eps, 1.0 - eps)
        pos = target >= 1.0
        num_pos = max(1, int(pos.sum()))
        neg_weight = np.power(1.0 - target, beta)
        pos_term = -np.power(1.0 - q, alpha) * np.log(q)
        neg_term = -neg_weight * np.power(q, alpha) * np.log1p(-q)
        loss = np.where(pos, pos_term, neg_term).sum() / num_pos
        self.save_for_backward(p, q, pos, neg_weight)
        self.params = (alpha, beta, num_pos)
        return np.asarray(loss, dtype=p.dtype)

    def backward(self, grad):
        p, q, pos, neg_weight = self.saved
        alpha, _, num_pos = self.params
        d_pos = alpha * np.power(1.0 - q, alpha - 1.0) * np.log(q) - np.power(1.0 - q, alpha) / q
        d_neg = -neg_weight * (alpha * np.power(q, alpha - 1.0) * np.log1p(-q) - np.power(q, alpha) / (1.0 - q))
        inside = (p >= BCE_EPS) & (p <= 1.0 - BCE_EPS)
        local = np.where(pos, d_pos, d_neg) / num_pos
        return np.where(inside, local * grad, 0.0).astype(p.dtype), None


class MaskedL1(Function):
    """Sum of absolute errors over masked cells, normalized by the mask count (at least one)."""

    def forward(self, pred, target, mask):
        _require_same_shape("masked_l1", pred, target)
        if mask.shape != pred.shape[1:]:
            raise ShapeError(f"masked_l1: mask {mask.shape} does not match map {pred.shape}")
        diff = pred - target
        weight = mask[None].astype(pred.dtype)
        count = max(1.0, float(mask.sum()))
        self.save_for_backward(np.sign(diff) * weight / count)
        return np.asarray((np.abs(diff) * weight).sum() / count, dtype=pred.dtype)

    def backward(self, grad):
        (local,) = self.saved
        return local * grad, None, None


# --- public API --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=factor)


def shift(x: Tensor, offset: float) -> Tensor:
    return Shift.apply(x, offset=offset)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def grl(x: Tensor) -> Tensor:
    """Gradient reversal: forward identity, backward multiplies the gradient by -1.

    Carries no coefficient; the adversarial weight is applied in the loss.
    """
    return GradientReversal.apply(x)


def identity(x: Tensor) -> Tensor:
    return Identity.apply(x)


def stop_gradient(x: Tensor) -> Tensor:
    return x.detach()


def tensor_sum(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def take(x: Tensor, index) -> Tensor:
    return Take.apply(x, index=index)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def channel_max(x: Tensor) -> Tensor:
    return ChannelMax.apply(x)


def condition(features: Tensor, spatial_map: Tensor) -> Tensor:
    return MapMultiply.apply(features, spatial_map)


def expand_row(row: Tensor, height: int, width: int) -> Tensor:
    return ExpandRow.apply(row, height=height, width=width)


def bilinear_resize(x: Tensor, height: int, width: int) -> Tensor:
    return BilinearResize.apply(x, height=height, width=width)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, kernels, bias, stride=stride, padding=padding)


def bce(p: Tensor, target: float) -> Tensor:
    """Mean over all pixels of ``-[d log p + (1 - d) log(1 - p)]``."""
    if target not in (0, 1):
        raise ValueError(f"bce target must be 0 or 1, got {target}")
    return BinaryCrossEntropy.apply(p, target=target)


def focal_loss(p: Tensor, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    return FocalLoss.apply(p, Tensor(target, dtype=p.dtype), alpha=alpha, beta=beta)


def masked_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    return MaskedL1.apply(pred, Tensor(target, dtype=pred.dtype), Tensor(mask, dtype=pred.dtype))
