"""Differentiable operators on NCHW tensors."""
import numpy as np

from .. import kernels
from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    pass


def _out_size(size, k, stride, pad, what):
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"{what}: kernel {k} larger than padded extent {size + 2 * pad}")
    return span // stride + 1


def _pad(x, pad, value=0.0):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def _unpad(x, pad):
    return x if pad == 0 else x[:, :, pad:-pad, pad:-pad]


def conv2d(x, weight, bias=None, stride=1, pad=0):
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: bad stride={stride} / pad={pad}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    ho = _out_size(h, kh, stride, pad, "conv2d height")
    wo = _out_size(w, kw, stride, pad, "conv2d width")
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d: zero-sized output")

    xp = _pad(x.data, pad)
    cols = kernels.im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def grad_fn(g, needs):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gx = gw = gb = None
        if needs[0]:
            dcols = g2 @ wmat
            dxp = kernels.col2im(dcols, n, c, h + 2 * pad, w + 2 * pad, kh, kw, stride, ho, wo)
            gx = _unpad(dxp, pad)
        if needs[1]:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and needs[2]:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(np.ascontiguousarray(out), parents, grad_fn, "conv2d")


def pool2d(x, kind="max", k=2, stride=None, pad=0):
    """Max, average, or global-average pooling.

    Max pooling routes the gradient to the first maximal cell of each window
    (row-major); padding cells never win.  Average pooling counts padded
    zeros in the divisor.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if kind == "global-avg":
        out = x.data.mean(axis=(2, 3), keepdims=True)

        def grad_fn(g, needs):
            return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

        return make_result(out, (x,), grad_fn, "pool2d")

    stride = k if stride is None else stride
    ho = _out_size(h, k, stride, pad, "pool2d height")
    wo = _out_size(w, k, stride, pad, "pool2d width")
    hp, wp = h + 2 * pad, w + 2 * pad

    if kind == "max":
        xp = _pad(x.data, pad, value=-np.inf)
        out, arg = kernels.maxpool_forward(xp, k, stride, ho, wo)

        def grad_fn(g, needs):
            return (_unpad(kernels.maxpool_backward(g, arg, hp, wp, k, stride), pad),)

    elif kind == "avg":
        xp = _pad(x.data, pad).reshape(n * c, 1, hp, wp)
        cols = kernels.im2col(xp, k, k, stride, ho, wo)
        out = cols.mean(axis=1).reshape(n, c, ho, wo)

        def grad_fn(g, needs):
            share = np.repeat(g.reshape(-1, 1) / (k * k), k * k, axis=1).astype(x.dtype)
            dxp = kernels.col2im(share, n * c, 1, hp, wp, k, k, stride, ho, wo)
            return (_unpad(dxp.reshape(n, c, hp, wp), pad),)

    else:
        raise ValueError(f"unknown pooling kind {kind!r}")
    return make_result(out, (x,), grad_fn, "pool2d")


def affine(x, weight, bias=None):
    """``x @ weight.T + bias`` for x of shape N x D and weight M x D."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"affine: cannot multiply {x.shape} by {weight.shape}^T")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def grad_fn(g, needs):
        gx = g @ weight.data if needs[0] else None
        gw = g.T @ x.data if needs[1] else None
        gb = g.sum(axis=0) if bias is not None and needs[2] else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, grad_fn, "affine")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)

    def grad_fn(g, needs):
        return (np.where(mask, g, 0).astype(g.dtype),)

    return make_result(out, (x,), grad_fn, "relu")


class RunningStats:
    """Per-channel running mean/variance for batch normalization."""

    def __init__(self, channels, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.initialized = False

    def reset(self):
        self.mean[:] = 0
        self.var[:] = 1
        self.initialized = True


def batchnorm2d(x, gamma, beta, stats, mode="train", momentum=0.1, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ValueError("batchnorm2d: eps must be positive")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    if mode == "train":
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.mean[:] = (1 - momentum) * stats.mean + momentum * mean
        stats.var[:] = (1 - momentum) * stats.var + momentum * var
        stats.initialized = True
    elif mode == "eval":
        if not stats.initialized:
            raise RuntimeError("batchnorm2d: uninitialized running statistics")
        mean, var = stats.mean, stats.var
    else:
        raise ValueError(f"unknown mode {mode!r}")

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    shape = (1, c, 1, 1)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    m = x.data.size // c

    def grad_fn(g, needs):
        gx = gg = gb = None
        if needs[1]:
            gg = (g * xhat).sum(axis=axes)
        if needs[2]:
            gb = g.sum(axis=axes)
        if needs[0]:
            dxhat = g * gamma.data.reshape(shape)
            if mode == "train":
                s1 = dxhat.sum(axis=axes).reshape(shape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
                gx = (inv_std.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std.reshape(shape)
        return gx, gg, gb

    return make_result(out.astype(x.dtype), (x, gamma, beta), grad_fn, "batchnorm2d")


def dropout(x, p, mode="train", rng=None):
    """Inverted dropout: survivors scaled by 1/(1-p) in training, identity in eval."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if mode == "eval" or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale

    def grad_fn(g, needs):
        return (g * mask,)

    return make_result(x.data * mask, (x,), grad_fn, "dropout")


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = np.mean(logsum - z[np.arange(n), labels])

    def grad_fn(g, needs):
        p = softmax(logits.data)
        p[np.arange(n), labels] -= 1
        return (p * (g / n),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), grad_fn, "softmax_cross_entropy")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data + b.data, (a, b), lambda g, needs: (g, g), "add")


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g, needs):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn, "concat")


def flatten(x):
    x = as_tensor(x)
    shape = x.shape
    return make_result(
        x.data.reshape(shape[0], -1), (x,), lambda g, needs: (g.reshape(shape),), "flatten"
    )


def total(x):
    """Sum of all elements as a scalar tensor."""
    x = as_tensor(x)
    return make_result(
        np.asarray(x.data.sum(), dtype=x.dtype),
        (x,),
        lambda g, needs: (np.broadcast_to(g, x.shape).astype(x.dtype),),
        "total",
    )


def weighted_sum(x, weights):
    """sum(x * weights) with constant ``weights``; a scalar probe for gradient checks."""
    x = as_tensor(x)
    w = np.asarray(weights, dtype=x.dtype)
    return make_result(
        np.asarray((x.data * w).sum(), dtype=x.dtype),
        (x,),
        lambda g, needs: (g * w,),
        "weighted_sum",
    )


__all__ = [
    "ShapeError",
    "Tensor",
    "conv2d",
    "pool2d",
    "affine",
    "relu",
    "RunningStats",
    "batchnorm2d",
    "dropout",
    "softmax",
    "softmax_cross_entropy",
    "add",
    "concat",
    "flatten",
    "total",
    "weighted_sum",
]
