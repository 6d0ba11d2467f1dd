"""
ops.py
------
Differentiable operations on `Tensor`. Each op is a `Function` subclass with
an explicit backward rule plus a lowercase functional wrapper.

Broadcasting is limited to what the model needs: trailing-dimension bias
adds, scalar gains and batched matmul over identical leading dimensions.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Sequence, Tuple, Type

import numpy as np

from ..errors import DimensionError, ParameterError, ShapeError
from .tensor import DTYPE, Function, Tensor

_GELU_C = math.sqrt(2.0 / math.pi)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so `grad` matches `shape`."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Add(Function):
    kind = "add"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        try:
            return a + b
        except ValueError:
            raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from None

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Mul(Function):
    kind = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        try:
            return a * b
        except ValueError:
            raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Scale(Function):
    kind = "scale"

    def forward(self, x, factor: float = 1.0):
        self.factor = DTYPE(factor)
        return x * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


class MatMul(Function):
    kind = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} differ")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class Transpose(Function):
    kind = "transpose"

    def forward(self, x, axes: Sequence[int] = ()):
        self.axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
        return np.ascontiguousarray(np.transpose(x, self.axes))

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Reshape(Function):
    kind = "reshape"

    def forward(self, x, shape: Sequence[int] = ()):
        self.in_shape = x.shape
        try:
            return x.reshape(tuple(shape))
        except ValueError:
            raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Take(Function):
    """Gather along one axis; backward scatters with accumulation."""
    kind = "take"

    def forward(self, x, index: np.ndarray = None, axis: int = 0):
        self.in_shape = x.shape
        self.index = np.asarray(index, dtype=np.int64)
        self.axis = axis % x.ndim
        return np.take(x, self.index, axis=self.axis)

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=DTYPE)
        where = (slice(None),) * self.axis + (self.index,)
        np.add.at(out, where, grad)
        return (out,)


class Sum(Function):
    kind = "sum"

    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum(dtype=DTYPE))

    def backward(self, grad):
        return (np.broadcast_to(grad, self.in_shape).astype(DTYPE),)


class Mean(Function):
    kind = "mean"

    def forward(self, x, axis: Optional[int] = None):
        self.in_shape = x.shape
        self.axis = axis
        self.count = x.size if axis is None else x.shape[axis]
        return np.asarray(x.mean(axis=axis, dtype=DTYPE))

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / DTYPE(self.count), self.in_shape).astype(DTYPE),)


class SoftmaxLastdim(Function):
    """
    Softmax over the last axis restricted to entries whose additive mask is 0.
    Masked entries and fully masked rows produce exact zeros.
    """
    kind = "softmax"

    def forward(self, x, additive_mask: Optional[np.ndarray] = None):
        if additive_mask is None:
            allowed = np.ones(x.shape, dtype=bool)
        else:
            additive_mask = np.broadcast_to(additive_mask, x.shape)
            if not np.all((additive_mask == 0) | (additive_mask == -np.inf)):
                raise ParameterError("softmax additive_mask entries must be 0 or -inf")
            allowed = additive_mask == 0
        masked = np.where(allowed, x, -np.inf)
        row_max = masked.max(axis=-1, keepdims=True)
        row_max = np.where(np.isfinite(row_max), row_max, 0.0).astype(DTYPE)
        e = np.where(allowed, np.exp(np.where(allowed, x - row_max, 0.0)), 0.0).astype(DTYPE)
        total = e.sum(axis=-1, keepdims=True)
        y = e / np.where(total > 0, total, DTYPE(1.0))
        self.y = y.astype(DTYPE)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    kind = "layer_norm"

    def forward(self, x, gain, bias, eps: float = 1e-5):
        d = x.shape[-1] if x.ndim else 0
        if d == 0:
            raise DimensionError(f"layer_norm: last dimension must be positive, got shape {x.shape}")
        if eps <= 0:
            raise ParameterError(f"layer_norm: eps must be positive, got {eps}")
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.inv = (1.0 / np.sqrt(var + DTYPE(eps))).astype(DTYPE)
        self.xhat = (centered * self.inv).astype(DTYPE)
        self.gain = gain
        self.gain_shape, self.bias_shape = gain.shape, bias.shape
        return self.xhat * gain + bias

    def backward(self, grad):
        d = self.xhat.shape[-1]
        dxhat = grad * self.gain
        dx = (self.inv / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=-1, keepdims=True)
        )
        dgain = unbroadcast(grad * self.xhat, self.gain_shape)
        dbias = unbroadcast(grad, self.bias_shape)
        return dx, dgain, dbias


class Gelu(Function):
    """tanh approximation of GELU."""
    kind = "gelu"

    def forward(self, x):
        self.x = x
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        self.t = np.tanh(inner).astype(DTYPE)
        return (0.5 * x * (1.0 + self.t)).astype(DTYPE)

    def backward(self, grad):
        x, t = self.x, self.t
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        return (grad * local,)


def interpolation_matrix(n_in: int, factor: int) -> np.ndarray:
    """Row-stochastic (n_in*factor x n_in) matrix of align-corners-false linear interpolation."""
    n_out = n_in * factor
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m.astype(DTYPE)


class BilinearUpsample(Function):
    """(c, h, w) -> (c, h*factor, w*factor) as the separable product Uh @ x @ Uw^T."""
    kind = "bilinear_upsample"

    def forward(self, x, factor: int = 1):
        if x.ndim != 3:
            raise DimensionError(f"bilinear_upsample expects (c, h, w), got {x.shape}")
        self.factor = factor
        if factor == 1:
            return x.copy()
        self.uh = interpolation_matrix(x.shape[1], factor)
        self.uw = interpolation_matrix(x.shape[2], factor)
        return np.matmul(np.matmul(self.uh, x), self.uw.T)

    def backward(self, grad):
        if self.factor == 1:
            return (grad,)
        return (np.matmul(np.matmul(self.uh.T, grad), self.uw),)


class BceWithLogits(Function):
    """Mean binary cross-entropy in the stable log-sum-exp form."""
    kind = "bce_with_logits"

    def forward(self, logits, targets: np.ndarray = None):
        targets = np.asarray(targets, dtype=DTYPE)
        if targets.shape != logits.shape:
            raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {targets.shape}")
        if np.any(targets < 0) or np.any(targets > 1):
            raise ParameterError("bce_with_logits: targets must lie in [0, 1]")
        self.logits, self.targets = logits, targets
        x = logits.astype(np.float64)
        per = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
        return np.asarray(per.mean(), dtype=DTYPE)

    def backward(self, grad):
        x = self.logits.astype(np.float64)
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        g = (sig - self.targets) / self.logits.size
        return (g * grad,)


def im2col_index(channels: int, h: int, w: int, k: int) -> np.ndarray:
    """Flat indices into the zero-padded (c, h+2p, w+2p) array for every k x k window."""
    p = k // 2
    hp, wp = h + 2 * p, w + 2 * p
    ci, di, dj = np.meshgrid(np.arange(channels), np.arange(k), np.arange(k), indexing="ij")
    offsets = (ci * hp * wp + di * wp + dj).reshape(-1)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    base = (ii * wp + jj).reshape(-1, 1)
    return base + offsets[None, :]


class Im2Col(Function):
    """(c, h, w) -> (h*w, c*k*k) windows with zero padding k//2 (odd k)."""
    kind = "im2col"

    def forward(self, x, k: int = 3):
        if k < 1 or k % 2 == 0:
            raise ParameterError(f"im2col kernel size must be odd and positive, got {k}")
        c, h, w = x.shape
        p = k // 2
        self.shape, self.p = x.shape, p
        padded = np.pad(x, ((0, 0), (p, p), (p, p)))
        self.padded_shape = padded.shape
        self.index = im2col_index(c, h, w, k)
        return padded.reshape(-1)[self.index]

    def backward(self, grad):
        flat = np.zeros(int(np.prod(self.padded_shape)), dtype=DTYPE)
        np.add.at(flat, self.index.reshape(-1), grad.reshape(-1))
        padded = flat.reshape(self.padded_shape)
        p = self.p
        _, hp, wp = self.padded_shape
        return (padded[:, p:hp - p, p:wp - p],)


OPS: Dict[str, Type[Function]] = {
    cls.kind: cls
    for cls in (Add, Mul, Scale, MatMul, Transpose, Reshape, Take, Sum, Mean,
                SoftmaxLastdim, LayerNorm, Gelu, BilinearUpsample, BceWithLogits, Im2Col)
}


def add(a, b) -> Tensor:
    return Add.apply(_as_tensor(a), _as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(_as_tensor(a), _as_tensor(b))


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=factor)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def transpose(x: Tensor, axes: Sequence[int] = ()) -> Tensor:
    return Transpose.apply(x, axes=axes)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=shape)


def take(x: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    return Take.apply(x, index=index, axis=axis)


def sum_all(x: Tensor) -> Tensor:
    return Sum.apply(x)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return Mean.apply(x, axis=axis)


def softmax_lastdim(x: Tensor, additive_mask: Optional[np.ndarray] = None) -> Tensor:
    return SoftmaxLastdim.apply(x, additive_mask=additive_mask)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gain, bias, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"bilinear_upsample factor must be an integer >= 1, got {factor}")
    return BilinearUpsample.apply(x, factor=int(factor))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    return BceWithLogits.apply(logits, targets=np.asarray(targets, dtype=DTYPE))


def im2col(x: Tensor, k: int) -> Tensor:
    return Im2Col.apply(x, k=k)
