"""Masked per-cell lift as a single tape op backed by ``kernels``."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import kernels
from .tensor import Tensor, as_tensor, make_output

_WEIGHT_ORDER = ("w1o", "b1o", "w2o", "b2o", "w1m", "b1m", "w2m", "b2m")


def masked_cell_lift(values, P, observed, weights: dict, backend=None) -> Tensor:
    """Lift each cell to ``E`` dims with the branch chosen by ``observed``.

    ``values`` (constant) and ``P`` share shape ``[..., T, F]``; the result is
    ``[..., T, F, E]``. ``weights`` maps the names in ``_WEIGHT_ORDER`` to tensors.
    Values of unobserved cells are never read.
    """
    impl = backend or kernels.backend
    P = as_tensor(P)
    values = np.asarray(values, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if values.shape != P.shape or observed.shape != P.shape:
        raise DimensionError(f"cell lift: values {values.shape}, P {P.shape}, mask {observed.shape} differ")
    ws = [as_tensor(weights[k]) for k in _WEIGHT_ORDER]
    w_arrays = [np.ascontiguousarray(w.data) for w in ws]
    v = np.ascontiguousarray(np.where(observed, values, 0.0).reshape(-1))
    p = np.ascontiguousarray(P.data.reshape(-1))
    obs = np.ascontiguousarray(observed.reshape(-1))
    E = w_arrays[3].shape[0]
    out = impl.cell_lift_forward(v, p, obs, *w_arrays).reshape(P.shape + (E,))

    def bw(g):
        grads = impl.cell_lift_backward(np.ascontiguousarray(g.reshape(-1, E)), v, p, obs, *w_arrays)
        return (grads[0].reshape(P.shape),) + tuple(grads[1:])

    return make_output(out, (P, *ws), bw, "masked_cell_lift")
