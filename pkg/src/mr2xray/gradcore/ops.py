"""Differentiable operations on NCHW tensors.

Each op computes its forward result with numpy and registers a closure that
maps the output gradient to one gradient per input (None when an input does
not need one).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from mr2xray.gradcore.tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    pass


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back)


def mul(a, b):
    """Elementwise product with broadcasting (used to apply weight maps)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back)


def relu(x):
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), back)


def leaky_relu(x, slope=0.2):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)

    def back(g):
        return (g * scale,)

    return make_result(x.data * scale, (x,), back)


def tanh(x):
    y = np.tanh(x.data)

    def back(g):
        return (g * (1.0 - y * y),)

    return make_result(y, (x,), back)


def abs_diff(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"abs_diff needs equal shapes, got {a.shape} and {b.shape}")
    d = a.data - b.data
    sign = np.sign(d)

    def back(g):
        return g * sign, -g * sign

    return make_result(np.abs(d), (a, b), back)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


# ----------------------------------------------------------------- reductions

def sum(x):  # noqa: A001 - mirrors numpy naming
    def back(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), back)


def mean(x):
    n = x.size

    def back(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return make_result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), back)


def l1_diff(a, b):
    """Mean absolute difference."""
    return mean(abs_diff(a, b))


def bce_with_logits(logits, target):
    """Elementwise binary cross-entropy on logits, in the overflow-free form
    max(z, 0) - z*t + log(1 + exp(-|z|))."""
    z = logits.data
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=z.dtype)
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def back(g):
        return (g * (expit(z) - t).astype(z.dtype),)

    return make_result(loss.astype(z.dtype), (logits,), back)


# -------------------------------------------------------------- convolution

def _windows(xp, k, s):
    """(N, C, Ho, Wo, k, k) strided view over a padded input."""
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def _col2im(cols, out_shape, k, s):
    """Scatter-add (C, k, k, N, Ho, Wo) patches into an (N, C, H, W) array."""
    out = np.zeros(out_shape, dtype=cols.dtype)
    ho, wo = cols.shape[4], cols.shape[5]
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += cols[:, i, j].transpose(1, 0, 2, 3)
    return out


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of x (N, C, H, W) with weight (O, C, k, k)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4D input and weight")
    n, c, h, w = x.shape
    o, cw, k, k2 = weight.shape
    if c != cw or k != k2:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {cw} (kernel {k}x{k2})")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: input {h}x{w} (pad {padding}) smaller than kernel {k}")
    xp = _pad(x.data, padding)
    win = _windows(xp, k, stride)
    out = np.tensordot(weight.data, win, axes=([1, 2, 3], [1, 4, 5])).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = gw = gb = None
        if x.requires_grad:
            cols = np.tensordot(weight.data, g, axes=([0], [1]))
            gxp = _col2im(cols, xp.shape, k, stride)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, back)


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Adjoint of conv2d w.r.t. its input; weight is (C_in, C_out, k, k).

    Output size is (H - 1) * stride - 2 * padding + k.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv_transpose2d expects 4D input and weight")
    n, c, h, w = x.shape
    ci, co, k, k2 = weight.shape
    if c != ci or k != k2:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, weight expects {ci}")
    hf, wf = (h - 1) * stride + k, (w - 1) * stride + k
    if hf - 2 * padding < 1 or wf - 2 * padding < 1:
        raise ShapeError("conv_transpose2d: padding too large for the output")
    cols = np.tensordot(weight.data, x.data, axes=([0], [1]))
    full = _col2im(cols, (n, co, hf, wf), k, stride)
    out = full[:, :, padding:hf - padding, padding:wf - padding]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = gw = gb = None
        win = _windows(_pad(g, padding), k, stride)
        if x.requires_grad:
            gx = np.tensordot(weight.data, win, axes=([1, 2, 3], [1, 4, 5])).transpose(1, 0, 2, 3)
        if weight.requires_grad:
            gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, parents, back)


def instance_norm(x, gain, shift, eps=1e-5):
    """Per-sample, per-channel standardization followed by a channel affine."""
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g4 = gain.data[None, :, None, None]
    out = xhat * g4 + shift.data[None, :, None, None]

    def back(g):
        gx = None
        if x.requires_grad:
            gh = g * g4
            gx = inv * (gh - gh.mean(axis=(2, 3), keepdims=True)
                        - xhat * (gh * xhat).mean(axis=(2, 3), keepdims=True))
        ggain = (g * xhat).sum(axis=(0, 2, 3)) if gain.requires_grad else None
        gshift = g.sum(axis=(0, 2, 3)) if shift.requires_grad else None
        return gx, ggain, gshift

    return make_result(out.astype(x.dtype), (x, gain, shift), back)


# ------------------------------------------------------------------ resizing

def bilinear_resize(image, new_h, new_w):
    """Bilinear resampling with the half-pixel (align_corners=False) convention.

    Works on the last two axes of a numpy array; not differentiated.
    """
    if new_h < 1 or new_w < 1:
        raise ValueError("target size must be at least 1x1")
    a = np.asarray(image.data if isinstance(image, Tensor) else image)
    h, w = a.shape[-2:]

    def coords(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        i0 = np.minimum(np.floor(pos).astype(np.intp), max(n_in - 2, 0))
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, wy = coords(h, new_h)
    x0, x1, wx = coords(w, new_w)
    wy = wy.astype(a.dtype)[:, None]
    wx = wx.astype(a.dtype)
    top = a[..., y0, :][..., x0] * (1 - wx) + a[..., y0, :][..., x1] * wx
    bot = a[..., y1, :][..., x0] * (1 - wx) + a[..., y1, :][..., x1] * wx
    return top * (1 - wy) + bot * wy
