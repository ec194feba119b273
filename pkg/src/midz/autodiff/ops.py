"""Differentiable operators.

Images and feature maps are NHWC. Reductions accumulate in float64 and
cast back to float32; convolution is im2col followed by one matmul.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels
from .tensor import DTYPE, ShapeError, Tensor, as_tensor, check_finite, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and g.shape[i + lead] != 1
    )
    out = g.sum(axis=axes, dtype=np.float64).reshape(shape)
    return out.astype(DTYPE)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    check_finite("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node("add", a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


bias_add = add


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    check_finite("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node("sub", a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    check_finite("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_node("mul", ad * bd, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    check_finite("matmul", a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return make_node("matmul", ad @ bd, (a, b), bw)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """NHWC convolution with weights of shape (kh, kw, c_in, c_out)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} / padding={padding}")
    check_finite("conv2d", x.data, w.data)
    B, H, W, C = x.shape
    kh, kw, _, cout = w.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: kernel {w.shape[:2]} larger than padded input {(Hp, Wp)}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    cols = _kernels.im2col(np.ascontiguousarray(xp), kh, kw, stride, Ho, Wo).reshape(B * Ho * Wo, kh * kw * C)
    wm = w.data.reshape(kh * kw * C, cout)
    out = (cols @ wm).reshape(B, Ho, Wo, cout)

    def bw(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wm.T).reshape(B, Ho, Wo, kh, kw, C)
            dxp = _kernels.col2im(dcols, Hp, Wp, stride)
            gx = dxp[:, padding:padding + H, padding:padding + W, :] if padding else dxp
        return gx, gw

    return make_node("conv2d", out, (x, w), bw)


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """Pointwise convolution: (B, H, W, C) with weight (C, c_out)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 2 or x.shape[3] != w.shape[0]:
        raise ShapeError(f"conv1x1: input {x.shape} incompatible with weight {w.shape}")
    check_finite("conv1x1", x.data, w.data)
    B, H, W, C = x.shape
    xm = x.data.reshape(-1, C)
    wd = w.data

    def bw(g):
        g2 = g.reshape(-1, wd.shape[1])
        return ((g2 @ wd.T).reshape(x.shape) if x.requires_grad else None,
                xm.T @ g2 if w.requires_grad else None)

    return make_node("conv1x1", (xm @ wd).reshape(B, H, W, wd.shape[1]), (x, w), bw)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    check_finite("relu", x.data)
    out = np.maximum(x.data, DTYPE(0))
    return make_node("relu", out, (x,), lambda g: (np.where(out > 0, g, DTYPE(0)),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    check_finite("leaky_relu", x.data)
    v = x.data
    pos = v > 0
    out = np.where(pos, v, v * DTYPE(slope))
    return make_node("leaky_relu", out, (x,), lambda g: (np.where(pos, g, g * DTYPE(slope)),))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(DTYPE)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    check_finite("sigmoid", x.data)
    s = _stable_sigmoid(x.data)
    return make_node("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x) computed as max(x, 0) + log1p(e^-|x|)."""
    x = as_tensor(x)
    check_finite("softplus", x.data)
    v = x.data
    out = (np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))).astype(DTYPE)
    return make_node("softplus", out, (x,), lambda g: (g * _stable_sigmoid(v),))


def absolute(x: Tensor) -> Tensor:
    x = as_tensor(x)
    check_finite("abs", x.data)
    sign = np.sign(x.data).astype(DTYPE)
    return make_node("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    check_finite("clip", x.data)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_node("clip", np.clip(x.data, lo, hi).astype(DTYPE), (x,), lambda g: (g * inside,))


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(a % ndim for a in axis))
    if len(set(axes)) != len(axes):
        raise ShapeError(f"reduction: repeated axis in {axis}")
    return axes


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    check_finite("sum", x.data)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, dtype=np.float64).astype(DTYPE)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    shape = x.shape
    return make_node("sum", out, (x,), lambda g: (np.broadcast_to(g.reshape(kept), shape).astype(DTYPE),))


def mean(x: Tensor, axis=None) -> Tensor:
    x = as_tensor(x)
    check_finite("mean", x.data)
    axes = _norm_axes(axis, x.ndim)
    if any(x.shape[a] == 0 for a in axes):
        raise ShapeError(f"mean: empty reduction over shape {x.shape}")
    count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, dtype=np.float64).astype(DTYPE)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    shape = x.shape
    return make_node("mean", out, (x,),
                     lambda g: (np.broadcast_to(g.reshape(kept) / DTYPE(count), shape).astype(DTYPE),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    check_finite("concat", *(t.data for t in tensors))
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        idx = [slice(None)] * ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return make_node("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    src = x.shape
    return make_node("reshape", out, (x,), lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis but the first."""
    return reshape(x, (x.shape[0], -1))


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows along axis 0 (used for in-batch negative pairing)."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1 or (idx.size and (idx.min() < -x.shape[0] or idx.max() >= x.shape[0])):
        raise ShapeError(f"take_rows: index out of range for shape {x.shape}")
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return make_node("take_rows", x.data[idx], (x,), bw)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {y.shape}")
    check_finite("cross_entropy", logits.data)
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), y] -= 1.0
        return ((p * (float(g.reshape(-1)[0]) / n)).astype(DTYPE),)

    return make_node("cross_entropy", np.asarray(loss, dtype=DTYPE), (logits,), bw)
