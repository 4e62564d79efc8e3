"""GRU over a whole sequence as a single tape op.

    z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
    r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
    c_t = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, EmptySequenceError
from . import kernels
from .ops import add, matmul, reshape
from .tensor import Tensor, as_tensor, make_output


def gru_recurrence(xw, u, h0=None, backend=None) -> Tensor:
    """Run the recurrence on precomputed input projections ``xw`` ([B, T, 3h])."""
    xw, u = as_tensor(xw), as_tensor(u)
    impl = backend or kernels.backend
    B, T, h3 = xw.shape
    h = h3 // 3
    if h0 is None:
        h0 = Tensor(np.zeros((B, h)))
    h0 = as_tensor(h0)
    hs, zs, rs, cs = impl.gru_forward(
        np.ascontiguousarray(xw.data), np.ascontiguousarray(u.data), np.ascontiguousarray(h0.data)
    )

    def bw(g):
        dxw, du, dh0 = impl.gru_backward(np.ascontiguousarray(g), np.ascontiguousarray(u.data), hs, zs, rs, cs)
        return dxw, du, dh0

    return make_output(hs[:, -1].copy(), (xw, u, h0), bw, "gru_recurrence")


def gru_sequence(x, w, u, b, h0=None, backend=None) -> Tensor:
    """Final hidden state of a GRU run over ``x``.

    ``x`` is ``[T, f]`` or ``[B, T, f]``; ``w`` is ``[f, 3h]``, ``u`` is ``[h, 3h]``
    and ``b`` is ``[3h]`` with gates ordered (update, reset, candidate).
    Returns ``[h]`` or ``[B, h]`` to match the input.
    """
    x, w, u, b = as_tensor(x), as_tensor(w), as_tensor(u), as_tensor(b)
    squeeze = x.ndim == 2
    if x.ndim not in (2, 3):
        raise DimensionError(f"gru input must be [T, f] or [B, T, f], got {x.shape}")
    if x.shape[-2] == 0:
        raise EmptySequenceError("gru_sequence received zero time steps")
    h = u.shape[0]
    if w.shape != (x.shape[-1], 3 * h) or u.shape != (h, 3 * h) or b.shape != (3 * h,):
        raise DimensionError(
            f"gru weights inconsistent with input {x.shape}: w {w.shape}, u {u.shape}, b {b.shape}"
        )
    if squeeze:
        x = reshape(x, (1,) + x.shape)
        if h0 is not None:
            h0 = reshape(as_tensor(h0), (1, h))
    xw = add(matmul(x, w), b)
    out = gru_recurrence(xw, u, h0, backend=backend)
    if squeeze:
        out = reshape(out, (h,))
    return out
