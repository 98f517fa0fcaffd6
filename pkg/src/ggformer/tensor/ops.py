"""Differentiable primitives.

Each op computes its value with numpy, logs itself to the active trace
(MACs for products, element counts for pointwise work) and, when a graph is
being built, attaches the closure returning input gradients.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .. import kernels
from ..errors import ConfigError, DimensionError, NumericError
from .core import Parameter, Tensor, as_tensor, make_result

LN_EPS = 1e-5


def _prod(xs):
    out = 1
    for v in xs:
        out *= int(v)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- products ----------------------------------------------------------------

def matmul(a, b):
    """``a @ b`` for 2-D operands, or stacks of them with identical leading extents."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul needs matching ranks >= 2, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    batch = _prod(a.shape[:-2])
    ad, bd = a.data, b.data

    def back(g):
        return (
            np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None,
            np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None,
        )

    return make_result(np.matmul(ad, bd), (a, b), back, "matmul", macs=batch * m * k * n)


def linear(x, w, b=None):
    """``x @ w + b`` over the last axis; ``w`` is stored ``Cin x Cout``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    cin, cout = w.shape
    rows = _prod(x.shape[:-1])
    xd = x.data.reshape(rows, cin)
    out = xd @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(x.shape[:-1] + (cout,))
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(rows, cout)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = xd.T @ g2 if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g2.sum(axis=0) if b.requires_grad else None)
        return grads

    return make_result(out, parents, back, "linear", macs=rows * cin * cout)


def depthwise_conv2d(x, k):
    """Per-channel 'same' cross-correlation of a ``C x h x w`` map, stride 1."""
    x, k = as_tensor(x), as_tensor(k)
    if x.ndim != 3 or k.ndim != 3 or k.shape[0] != x.shape[0]:
        raise DimensionError(f"depthwise_conv2d: input {x.shape} vs kernel {k.shape}")
    c, kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"depthwise_conv2d needs odd kernel extents, got {kh}x{kw}")
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(k.data.astype(xd.dtype, copy=False))
    out = kernels.forward(xd, kd)

    def back(g):
        g = np.ascontiguousarray(g)
        return (
            kernels.backward_input(g, kd) if x.requires_grad else None,
            kernels.backward_kernel(g, xd, kh, kw) if k.requires_grad else None,
        )

    _, h, w = x.shape
    return make_result(out, (x, k), back, "dwconv", macs=c * h * w * kh * kw)


# -- pointwise and reductions ------------------------------------------------

def add(a, b):
    """Elementwise sum; ``b`` may broadcast against ``a`` (bias addition only)."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot combine {a.shape} and {b.shape}") from exc
    if out.shape != a.shape:
        raise DimensionError(f"add: {b.shape} may broadcast into {a.shape}, not the reverse")

    def back(g):
        return g, _unbroadcast(g, b.shape)

    return make_result(out, (a, b), back, "add", elementwise=out.size)


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul", elementwise=ad.size)


def scale(x, s):
    x = as_tensor(x)
    s = float(s)
    return make_result(x.data * s, (x,), lambda g: (g * s,), "scale", elementwise=x.size)


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return make_result(
        np.array([x.data.sum()]), (x,), lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),),
        "sum", elementwise=x.size,
    )


def mean(x, axis):
    """Mean over one axis (axis kept out of the result)."""
    x = as_tensor(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    out = x.data.mean(axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)

    def back(g):
        g = g.reshape(out.shape if x.ndim > 1 else ())
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),)

    return make_result(out, (x,), back, "mean", elementwise=x.size)


def softmax_rows(x):
    """Softmax over the last axis with max subtraction."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN in input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make_result(p, (x,), back, "softmax", elementwise=x.size)


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalise over the last (channel) axis, then ``gamma * xhat + beta``."""
    x = as_tensor(x)
    c = x.shape[-1]
    if c == 0 or gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: channels {c} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def back(g):
        flat = (-1, c)
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(flat).sum(axis=0) if gamma.requires_grad else None
        gb = g.reshape(flat).sum(axis=0) if beta.requires_grad else None
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), back, "layer_norm", elementwise=x.size)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_result(xd * cdf, (x,), back, "gelu", elementwise=x.size)


# -- layout ------------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    src = x.shape
    return make_result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)), (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose",
    )


def take(x, index, axis=0):
    """Gather along ``axis``; repeated indices accumulate in the gradient."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    axis = axis % x.ndim
    n = x.shape[axis]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise DimensionError(f"take: index out of range for extent {n}")
    out = np.take(x.data, index, axis=axis)

    def back(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gm = np.moveaxis(gx, axis, 0)
        gsrc = np.moveaxis(g, tuple(range(axis, axis + index.ndim)), tuple(range(index.ndim)))
        np.add.at(gm, index.reshape(-1), gsrc.reshape((-1,) + gm.shape[1:]))
        return (gx,)

    return make_result(out, (x,), back, "take")
