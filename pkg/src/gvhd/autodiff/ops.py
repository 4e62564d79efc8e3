"""Differentiable primitives.

Every function takes :class:`Tensor` (or array-like constants) and returns a
new :class:`Tensor`; when a tape is active the op is recorded together with a
closure computing its vector-Jacobian product.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, DimensionError, EmptySequenceError
from .tensor import Tensor, as_tensor, make_output

LAYER_NORM_EPS = 1e-5


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return make_output(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc
    return make_output(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    return make_output(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting rules)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                # weight matrix shared across the batch: one GEMM
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_output(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------- pointwise

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return make_output(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return make_output(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_output(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data)
    return make_output(e, (x,), lambda g: (g * e,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_output(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def softplus(x) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)
    return make_output(np.logaddexp(0.0, x.data), (x,), lambda g: (g * expit(x.data),), "softplus")


def sin(x) -> Tensor:
    x = as_tensor(x)
    return make_output(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")


def cos(x) -> Tensor:
    x = as_tensor(x)
    return make_output(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),), "cos")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` is true, else ``b``. ``cond`` is a constant."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    return make_output(
        out, (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                   _unbroadcast(np.where(cond, 0.0, g), b.shape)),
        "where",
    )


# ---------------------------------------------------------------- reshaping

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    return make_output(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x, start_axis: int = 1) -> Tensor:
    x = as_tensor(x)
    return reshape(x, x.shape[:start_axis] + (-1,))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return make_output(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(
                f"concat along axis {axis}: incompatible shapes {[t.shape for t in ts]}"
            )
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return make_output(out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return make_output(
        out, tuple(ts),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


def take(x, index, axis: int = 0) -> Tensor:
    """Gather entries of ``x`` along ``axis``; repeated indices accumulate gradient."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    out = np.take(x.data, index, axis=axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (gx,)

    return make_output(out, (x,), bw, "take")


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return make_output(np.asarray(out), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return make_output(
        s, (x,),
        lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),),
        "softmax",
    )


# ---------------------------------------------------------------- layers

def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis with population variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs last axis >= 2, got {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return make_output(out, (x, gain, bias), bw, "layer_norm")


def conv_time_fullwidth(x, kernels, bias) -> Tensor:
    """Temporal convolution whose kernels cover the whole feature axis.

    ``x`` is ``[..., T, f]``, ``kernels`` is ``[c, k_t, f]`` and ``bias`` is
    ``[c]``. Zero padding of ``(k_t - 1) / 2`` keeps the output ``[..., T, c]``.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if kernels.ndim != 3:
        raise DimensionError(f"kernels must be [c, k_t, f], got {kernels.shape}")
    c, k, f = kernels.shape
    if x.ndim < 2:
        raise DimensionError(f"conv input must be [..., T, f], got {x.shape}")
    T = x.shape[-2]
    if T == 0:
        raise EmptySequenceError("conv_time_fullwidth received zero time steps")
    if k % 2 == 0 or k > 2 * T + 1:
        raise ConfigError(f"kernel height {k} must be odd and <= 2T+1 (T={T})")
    if x.shape[-1] != f:
        raise DimensionError(f"conv input width {x.shape[-1]} != kernel width {f} (input {x.shape}, kernels {kernels.shape})")
    if bias.shape != (c,):
        raise DimensionError(f"conv bias {bias.shape} != ({c},)")
    lead = x.shape[:-2]
    xb = x.data.reshape((-1, T, f))
    pad = (k - 1) // 2
    xp = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
    cols = np.concatenate([xp[:, j:j + T] for j in range(k)], axis=-1)  # [B, T, k*f]
    w2 = kernels.data.reshape(c, k * f).T
    out = (cols @ w2 + bias.data).reshape(lead + (T, c))

    def bw(g):
        gb = g.reshape(-1, T, c)
        g2 = gb.reshape(-1, c)
        dk = (cols.reshape(-1, k * f).T @ g2).T.reshape(c, k, f)
        dbias = g2.sum(axis=0)
        dx = None
        if x.requires_grad:
            dcols = (gb @ w2.T).reshape(-1, T, k, f)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + T] += dcols[:, :, j]
            dx = dxp[:, pad:pad + T].reshape(x.shape)
        return dx, dk, dbias

    return make_output(out, (x, kernels, bias), bw, "conv_time_fullwidth")
